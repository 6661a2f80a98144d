// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <reagent/core_types.hpp>
#include <reagent/errors.hpp>
#include <reagent/policy.hpp>

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace reagent
{

inline constexpr std::size_t kTrainMaxSteps = 13;
inline constexpr std::size_t kEvalMaxSteps = 30;
inline constexpr double kTrainTemperature = 0.7;
inline constexpr double kEvalTemperature = 0.6;

inline constexpr std::string_view kNoResults = "no results";
inline constexpr std::string_view kMalformedCall = "malformed call";

class BudgetExhausted: public Error
{
  public:
    BudgetExhausted(): Error("tool step budget exhausted") {}
};

/// Seeded tool backends. Every table is a pure function of the environment seed.
struct KnowledgeBase
{
    std::map<std::string, std::string> search_index; // query -> result
    std::map<std::string, std::string> pages;        // url -> page text
    std::map<std::string, std::string> files;        // file name -> content
    std::map<std::string, std::string> images;       // image name -> caption
    std::map<std::string, std::string> audio;        // clip name -> transcript

    // Material for the four task families.
    std::string expression;
    std::string expression_value;
    std::string lookup_key;
    std::string file_name;
    std::string topic;
};

auto build_knowledge_base(std::uint64_t env_seed) -> KnowledgeBase;

/// Integer arithmetic over + - * / and parentheses. Throws std::invalid_argument
/// on syntax errors, division by zero, inexact division, or overflow.
auto evaluate_arithmetic(std::string_view expression) -> std::int64_t;

auto generate_task(std::uint64_t seed, TaskFamily family) -> Task;

/// `count` tasks of one family, seeds derived from `base_seed`.
auto generate_tasks(std::uint64_t base_seed, TaskFamily family, std::size_t count) -> std::vector<Task>;

/// The subject the prompt asks about: everything after the leading verb.
auto query_subject(std::string_view prompt) -> std::string;

/// Tools each family must use, in order.
auto required_tools(TaskFamily family) -> std::vector<Tool>;

class EnvState
{
  public:
    EnvState(Task task, std::size_t max_steps);

    [[nodiscard]] auto task() const noexcept -> const Task& { return _task; }
    [[nodiscard]] auto knowledge() const noexcept -> const KnowledgeBase& { return _kb; }
    [[nodiscard]] auto remaining_steps() const noexcept -> std::size_t { return _remaining; }
    [[nodiscard]] auto max_steps() const noexcept -> std::size_t { return _maxSteps; }
    [[nodiscard]] auto transcript() const noexcept -> const std::vector<ToolCall>& { return _transcript; }

  private:
    friend auto execute_tool(EnvState& state, ToolCall call) -> std::string;

    Task _task;
    KnowledgeBase _kb;
    std::size_t _maxSteps;
    std::size_t _remaining;
    std::vector<ToolCall> _transcript;
};

/// Runs one tool call. Tool failures are observations, not errors; only an
/// exhausted step budget throws.
auto execute_tool(EnvState& state, ToolCall call) -> std::string;

// -- action grammar ------------------------------------------------------------

struct Frame
{
    enum class Kind : std::uint8_t
    {
        Call,
        Answer,
        Malformed,
        Stop,
    };

    Kind kind = Kind::Malformed;
    Tool tool = Tool::Search;       // Call only
    Symbol arg = Symbol::ArgQuery;  // Call and Answer
    std::size_t begin = 0;          // index of the first symbol
    std::size_t end = 0;            // one past the last symbol
};

/// Incremental decoder. Unexpected symbols close the current frame as malformed.
class FrameDecoder
{
  public:
    auto push(Symbol s) -> std::optional<Frame>;
    [[nodiscard]] auto in_frame() const noexcept -> bool { return _state != State::Idle; }

  private:
    enum class State : std::uint8_t
    {
        Idle,
        CallTool,
        AnswerOpen,
    };

    auto finish(Frame::Kind kind) -> Frame;

    State _state = State::Idle;
    std::size_t _pos = 0;
    std::size_t _begin = 0;
    Tool _tool = Tool::Search;
    Symbol _arg = Symbol::ArgQuery;
};

/// Complete frames in order; a trailing unfinished frame is dropped.
auto decode_frames(std::span<const Symbol> actions) -> std::vector<Frame>;

/// A fabricated value that never matches a knowledge-base entry.
auto guess_value(std::string_view prompt) -> std::string;

auto resolve_argument(Symbol arg, std::string_view prompt, const std::optional<std::string>& last_observation)
    -> std::string;

// -- episodes ------------------------------------------------------------------

struct EpisodeCaps
{
    std::size_t max_steps = kTrainMaxSteps; // tool calls
    std::size_t max_len = 48;               // emitted symbols
    double temperature = kTrainTemperature;
};

struct Episode
{
    Trajectory trajectory;
    Context context; // conditioning context including the observations received
};

/// Chooses the next symbol given the context and the prefix; returns the symbol and its log-probability.
using Emitter = std::function<std::pair<Symbol, double>(const Context&, std::span<const Symbol>)>;

auto run_loop(const Emitter& emit, Context ctx, const Task& task, Stage stage, const EpisodeCaps& caps) -> Episode;

auto run_episode(const PolicyParams& params, Context ctx, const Task& task, Stage stage, const EpisodeCaps& caps,
                 Rng& rng) -> Episode;

/// Canonical solution for a family (the scripted oracle agent).
auto oracle_script(TaskFamily family) -> std::vector<Symbol>;

/// Plays `script` through the environment; log-probabilities are recorded as 0.
auto run_scripted(std::span<const Symbol> script, Context ctx, const Task& task, const EpisodeCaps& caps) -> Episode;

/// Rebuilds the observation timeline of `t` on top of `base`, for log-prob recomputation.
auto replay_context(Context base, const Trajectory& t) -> Context;

} // namespace reagent
