// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace reagent
{

enum class TaskFamily : std::uint8_t
{
    Arithmetic,
    Lookup,
    FileExtract,
    MultiHop,
};

inline constexpr std::array kAllFamilies = {
    TaskFamily::Arithmetic, TaskFamily::Lookup, TaskFamily::FileExtract, TaskFamily::MultiHop,
};

enum class Tool : std::uint8_t
{
    Search,
    WebBrowse,
    PythonCode,
    FileReader,
    ImageDescriptor,
    AudioConverter,
};

inline constexpr std::array kAllTools = {
    Tool::Search,     Tool::WebBrowse,       Tool::PythonCode,
    Tool::FileReader, Tool::ImageDescriptor, Tool::AudioConverter,
};

enum class Stage : std::uint8_t
{
    First = 1,
    Refined = 2,
};

/// The policy vocabulary. Frames are two symbols long:
///   <Tool*> <Arg*>     executes a tool
///   Answer <Arg*>      commits a final answer
///   End                stops without an answer
enum class Symbol : std::uint8_t
{
    End,
    Answer,
    ToolSearch,
    ToolWebBrowse,
    ToolPythonCode,
    ToolFileReader,
    ToolImageDescriptor,
    ToolAudioConverter,
    ArgQuery,       // the subject named in the task prompt
    ArgObservation, // the most recent observation
    ArgGuess,       // a fabricated value
};

inline constexpr std::size_t kVocabSize = 11;

auto to_string(TaskFamily family) -> std::string_view;
auto to_string(Tool tool) -> std::string_view;
auto to_string(Symbol symbol) -> std::string_view;
auto parse_task_family(std::string_view text) -> std::optional<TaskFamily>;
auto parse_tool(std::string_view text) -> std::optional<Tool>;

auto is_tool_symbol(Symbol s) -> bool;
auto is_arg_symbol(Symbol s) -> bool;
auto tool_of(Symbol s) -> Tool;
auto symbol_of(Tool t) -> Symbol;

struct Task
{
    std::string id;
    TaskFamily family = TaskFamily::Arithmetic;
    std::string prompt;
    std::string ground_truth;
    std::uint64_t env_seed = 0;

    auto operator==(const Task&) const -> bool = default;
};

struct ToolCall
{
    Tool tool = Tool::Search;
    std::string args;
    std::string observation; // empty until executed

    auto operator==(const ToolCall&) const -> bool = default;
};

struct Trajectory
{
    std::string task_id;
    Stage stage = Stage::First;
    std::vector<Symbol> actions;
    std::vector<ToolCall> tool_calls;
    std::string final_answer; // empty when the episode ended without an answer
    std::vector<double> old_logp; // natural log, one per action, under the sampling distribution
    std::uint64_t context_fingerprint = 0;

    auto operator==(const Trajectory&) const -> bool = default;
};

/// Throws ValidationError if the trajectory breaks a structural invariant.
void validate_trajectory(const Trajectory& t, std::size_t max_tool_calls);

/// Three-block evaluation of a trajectory. Construction rejects invalid content.
class Judgment
{
  public:
    Judgment(std::string think, std::string critique, double score);

    [[nodiscard]] auto think() const noexcept -> const std::string& { return _think; }
    [[nodiscard]] auto critique() const noexcept -> const std::string& { return _critique; }
    [[nodiscard]] auto score() const noexcept -> double { return _score; }

    auto operator==(const Judgment&) const -> bool = default;

  private:
    std::string _think;
    std::string _critique;
    double _score;
};

struct RewardBreakdown
{
    double rule = 0.0;
    double model = 0.0;
    double lambda = 0.0;
    double combined = 0.0;

    auto operator==(const RewardBreakdown&) const -> bool = default;
};

/// Lowercase, trim, collapse internal whitespace, drop trailing periods. Idempotent.
auto normalize_answer(std::string_view raw) -> std::string;

} // namespace reagent
