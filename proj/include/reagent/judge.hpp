// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <reagent/core_types.hpp>
#include <reagent/errors.hpp>

#include <array>
#include <string>
#include <string_view>
#include <vector>

namespace reagent
{

enum class FlawCode : std::uint8_t
{
    RepeatedCall,
    MissingRequiredTool,
    UnverifiedAnswer,
    MalformedCall,
    HallucinatedResource,
    OverBudget,
    NoAnswer,
};

inline constexpr std::array kAllFlaws = {
    FlawCode::RepeatedCall,         FlawCode::MissingRequiredTool, FlawCode::UnverifiedAnswer,
    FlawCode::MalformedCall,        FlawCode::HallucinatedResource, FlawCode::OverBudget,
    FlawCode::NoAnswer,
};

auto to_string(FlawCode code) -> std::string_view;

struct PenaltyTable
{
    double repeated_call = 0.2;
    double missing_required_tool = 0.3;
    double unverified_answer = 0.15;
    double malformed_call = 0.15;
    double hallucinated_resource = 0.15;
    double over_budget = 0.15;
    double no_answer = 0.4;

    [[nodiscard]] auto penalty(FlawCode code) const -> double;
};

/// Flaws present in `traj`. Reads the task prompt and family only, never the ground truth.
auto detect_flaws(const Task& task, const Trajectory& traj) -> std::vector<FlawCode>;

auto critique_template(FlawCode code, const Task& task) -> std::string;

/// clamp(1 - sum of penalties, 0, 1), rounded to six decimals.
auto oracle_score(const std::vector<FlawCode>& flaws, const PenaltyTable& penalties = {}) -> double;

/// Raw three-block judgment text for `traj`; always accepted by parse_judgment.
auto oracle_judge(const Task& task, const Trajectory& traj, const PenaltyTable& penalties = {}) -> std::string;

// -- the three-block text contract -----------------------------------------------

enum class JudgmentErrorKind : std::uint8_t
{
    MissingBlock,
    DuplicateBlock,
    InvalidScore,
    BlockOrder,
    EmptyBlock,
};

class JudgmentParseError: public Error
{
  public:
    JudgmentParseError(JudgmentErrorKind kind, std::string detail);

    [[nodiscard]] auto kind() const noexcept -> JudgmentErrorKind { return _kind; }
    /// Block name or offending fragment.
    [[nodiscard]] auto detail() const noexcept -> const std::string& { return _detail; }

  private:
    JudgmentErrorKind _kind;
    std::string _detail;
};

/// Exactly one <think>, <critique> and <score> block, in that order. The score
/// is a decimal in [0, 1] with at most six fractional digits.
auto parse_judgment(std::string_view raw) -> Judgment;

/// Inverse of parse_judgment; the score is written with at most six decimals.
auto render_judgment(const Judgment& judgment) -> std::string;

auto format_score(double score) -> std::string;

/// Plain-text rendering of a trajectory, as shown to external judges.
auto render_trajectory(std::string_view task_prompt, const Trajectory& traj) -> std::string;

// -- backends --------------------------------------------------------------------

class JudgeUnavailable: public Error
{
  public:
    using Error::Error;
};

/// Produces raw judgment text for a (task, trajectory) pair.
class JudgeBackend
{
  public:
    virtual ~JudgeBackend() = default;
    virtual auto evaluate(const Task& task, const Trajectory& traj) -> std::string = 0;
};

class OracleJudge final: public JudgeBackend
{
  public:
    explicit OracleJudge(PenaltyTable penalties = {}): _penalties(penalties) {}

    auto evaluate(const Task& task, const Trajectory& traj) -> std::string override
    {
        return oracle_judge(task, traj, _penalties);
    }

  private:
    PenaltyTable _penalties;
};

/// Invokes the backend and parses its output. Parse errors propagate.
auto judge(JudgeBackend& backend, const Task& task, const Trajectory& traj) -> Judgment;

} // namespace reagent
