// SPDX-License-Identifier: Apache-2.0
#include <reagent/environment.hpp>
#include <reagent/judge.hpp>

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <regex>
#include <set>

namespace reagent
{

namespace
{

auto successful(std::string_view observation) -> bool
{
    return observation != kNoResults && observation != kMalformedCall && !observation.starts_with("error");
}

auto trim(std::string_view s) -> std::string_view
{
    auto const isSpace = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
    while (!s.empty() && isSpace(s.front()))
        s.remove_prefix(1);
    while (!s.empty() && isSpace(s.back()))
        s.remove_suffix(1);
    return s;
}

auto tool_list(TaskFamily family) -> std::string
{
    auto out = std::string {};
    for (auto t: required_tools(family))
        out += (out.empty() ? "" : " then ") + std::string(to_string(t));
    return out;
}

auto check_text(FlawCode code) -> std::string_view
{
    switch (code)
    {
        case FlawCode::RepeatedCall: return "repeated identical tool calls";
        case FlawCode::MissingRequiredTool: return "essential tools were called";
        case FlawCode::UnverifiedAnswer: return "final answer is grounded in tool output";
        case FlawCode::MalformedCall: return "every tool call is well formed";
        case FlawCode::HallucinatedResource: return "tool arguments come from the task or earlier output";
        case FlawCode::OverBudget: return "tool-step budget respected";
        case FlawCode::NoAnswer: return "a final answer was given";
    }
    return "";
}

} // namespace

auto to_string(FlawCode code) -> std::string_view
{
    switch (code)
    {
        case FlawCode::RepeatedCall: return "RepeatedCall";
        case FlawCode::MissingRequiredTool: return "MissingRequiredTool";
        case FlawCode::UnverifiedAnswer: return "UnverifiedAnswer";
        case FlawCode::MalformedCall: return "MalformedCall";
        case FlawCode::HallucinatedResource: return "HallucinatedResource";
        case FlawCode::OverBudget: return "OverBudget";
        case FlawCode::NoAnswer: return "NoAnswer";
    }
    return "?";
}

auto PenaltyTable::penalty(FlawCode code) const -> double
{
    switch (code)
    {
        case FlawCode::RepeatedCall: return repeated_call;
        case FlawCode::MissingRequiredTool: return missing_required_tool;
        case FlawCode::UnverifiedAnswer: return unverified_answer;
        case FlawCode::MalformedCall: return malformed_call;
        case FlawCode::HallucinatedResource: return hallucinated_resource;
        case FlawCode::OverBudget: return over_budget;
        case FlawCode::NoAnswer: return no_answer;
    }
    return 0.0;
}

auto detect_flaws(const Task& task, const Trajectory& traj) -> std::vector<FlawCode>
{
    auto const frames = decode_frames(traj.actions);
    auto const subject = query_subject(task.prompt);
    auto flaws = std::vector<FlawCode> {};

    // RepeatedCall: the same (tool, args) executed more than once.
    auto seen = std::set<std::pair<Tool, std::string>> {};
    auto repeated = false;
    for (auto const& c: traj.tool_calls)
        repeated |= !seen.emplace(c.tool, c.args).second;
    if (repeated)
        flaws.push_back(FlawCode::RepeatedCall);

    auto used = std::set<Tool> {};
    for (auto const& c: traj.tool_calls)
        used.insert(c.tool);
    auto const required = required_tools(task.family);
    if (!std::ranges::all_of(required, [&](Tool t) { return used.contains(t); }))
        flaws.push_back(FlawCode::MissingRequiredTool);

    if (!traj.final_answer.empty())
    {
        auto const answer = normalize_answer(traj.final_answer);
        auto const grounded = std::ranges::any_of(traj.tool_calls, [&](const ToolCall& c) {
            return successful(c.observation) && normalize_answer(c.observation) == answer;
        });
        if (!grounded)
            flaws.push_back(FlawCode::UnverifiedAnswer);
    }

    if (std::ranges::any_of(frames, [](const Frame& f) { return f.kind == Frame::Kind::Malformed; }))
        flaws.push_back(FlawCode::MalformedCall);

    // HallucinatedResource: an argument that is neither the task subject nor an earlier successful observation.
    auto earlier = std::set<std::string> {};
    auto hallucinated = false;
    for (auto const& c: traj.tool_calls)
    {
        auto const arg = std::string(c.args);
        auto const stripped = arg.starts_with("url:") ? arg.substr(4) : arg;
        if (arg != subject && !earlier.contains(arg) && !earlier.contains(stripped))
            hallucinated = true;
        if (successful(c.observation))
        {
            earlier.insert(c.observation);
            if (c.observation.starts_with("url:"))
                earlier.insert(c.observation.substr(4));
        }
    }
    if (hallucinated)
        flaws.push_back(FlawCode::HallucinatedResource);

    auto const attempted = std::ranges::count_if(frames, [](const Frame& f) { return f.kind == Frame::Kind::Call; });
    if (static_cast<std::size_t>(attempted) > traj.tool_calls.size())
        flaws.push_back(FlawCode::OverBudget);

    if (traj.final_answer.empty())
        flaws.push_back(FlawCode::NoAnswer);

    return flaws;
}

auto critique_template(FlawCode code, const Task& task) -> std::string
{
    switch (code)
    {
        case FlawCode::RepeatedCall:
            return "Repeated an identical tool call without new purpose; do not re-issue the same call.";
        case FlawCode::MissingRequiredTool:
            return fmt::format("Missing essential tool call: this task needs {}.", tool_list(task.family));
        case FlawCode::UnverifiedAnswer:
            return "The final answer is not supported by any tool output; verify it with a tool before answering.";
        case FlawCode::MalformedCall:
            return "Issued a malformed tool call; frame each call as one tool and one argument.";
        case FlawCode::HallucinatedResource:
            return "Used a tool argument that appears nowhere in the task or in earlier tool output.";
        case FlawCode::OverBudget:
            return "Ran out of tool steps; stop calling tools once the needed result is available.";
        case FlawCode::NoAnswer: return "No final answer was given; conclude with an answer taken from tool output.";
    }
    return {};
}

auto oracle_score(const std::vector<FlawCode>& flaws, const PenaltyTable& penalties) -> double
{
    auto total = 0.0;
    for (auto f: flaws)
        total += penalties.penalty(f);
    auto const score = std::clamp(1.0 - total, 0.0, 1.0);
    return std::round(score * 1e6) / 1e6;
}

auto oracle_judge(const Task& task, const Trajectory& traj, const PenaltyTable& penalties) -> std::string
{
    auto const flaws = detect_flaws(task, traj);
    auto const flagged = [&](FlawCode c) { return std::ranges::find(flaws, c) != flaws.end(); };

    auto think = fmt::format("Reviewed {} executed tool call(s) for a {} task.", traj.tool_calls.size(),
                             to_string(task.family));
    for (auto code: kAllFlaws)
        think += fmt::format("\ncheck {} ({}): {}", to_string(code), check_text(code), flagged(code) ? "flagged" : "ok");

    auto critique = std::string {};
    for (auto code: flaws)
        critique += (critique.empty() ? "" : " ") + critique_template(code, task);
    if (critique.empty())
        critique = "No flaws detected in reasoning or tool use.";

    return render_judgment(Judgment(std::move(think), std::move(critique), oracle_score(flaws, penalties)));
}

// -- text contract ---------------------------------------------------------------

JudgmentParseError::JudgmentParseError(JudgmentErrorKind kind, std::string detail):
    Error([&] {
        switch (kind)
        {
            case JudgmentErrorKind::MissingBlock: return "missing block <" + detail + ">";
            case JudgmentErrorKind::DuplicateBlock: return "duplicate block <" + detail + ">";
            case JudgmentErrorKind::InvalidScore: return "invalid score '" + detail + "'";
            case JudgmentErrorKind::BlockOrder: return "blocks out of order: " + detail;
            case JudgmentErrorKind::EmptyBlock: return "empty block <" + detail + ">";
        }
        return detail;
    }()),
    _kind(kind),
    _detail(std::move(detail))
{
}

namespace
{

struct BlockSpan
{
    std::size_t open;    // position of "<name>"
    std::size_t close;   // position of "</name>"
    std::string_view body;
};

auto count_occurrences(std::string_view text, std::string_view needle) -> std::size_t
{
    auto n = std::size_t { 0 };
    for (auto pos = text.find(needle); pos != std::string_view::npos; pos = text.find(needle, pos + needle.size()))
        ++n;
    return n;
}

auto locate(std::string_view raw, std::string_view name) -> BlockSpan
{
    auto const open = fmt::format("<{}>", name);
    auto const close = fmt::format("</{}>", name);
    auto const opens = count_occurrences(raw, open);
    auto const closes = count_occurrences(raw, close);
    if (opens == 0 || closes == 0)
        throw JudgmentParseError(JudgmentErrorKind::MissingBlock, std::string(name));
    if (opens > 1 || closes > 1)
        throw JudgmentParseError(JudgmentErrorKind::DuplicateBlock, std::string(name));
    auto const o = raw.find(open);
    auto const c = raw.find(close);
    if (c < o)
        throw JudgmentParseError(JudgmentErrorKind::BlockOrder, fmt::format("</{}> precedes <{}>", name, name));
    auto const bodyStart = o + open.size();
    return BlockSpan { .open = o, .close = c, .body = raw.substr(bodyStart, c - bodyStart) };
}

auto parse_score(std::string_view fragment) -> double
{
    static const auto pattern = std::regex(R"(^(0(\.[0-9]{1,6})?|1(\.0{1,6})?)$)");
    auto const text = std::string(trim(fragment));
    if (!std::regex_match(text, pattern))
        throw JudgmentParseError(JudgmentErrorKind::InvalidScore, std::string(fragment));
    return std::stod(text);
}

} // namespace

auto parse_judgment(std::string_view raw) -> Judgment
{
    auto const think = locate(raw, "think");
    auto const critique = locate(raw, "critique");
    auto const score = locate(raw, "score");

    if (!(think.close < critique.open))
        throw JudgmentParseError(JudgmentErrorKind::BlockOrder, "<think> must close before <critique>");
    if (!(critique.close < score.open))
        throw JudgmentParseError(JudgmentErrorKind::BlockOrder, "<critique> must close before <score>");

    auto const thinkText = trim(think.body);
    auto const critiqueText = trim(critique.body);
    if (thinkText.empty())
        throw JudgmentParseError(JudgmentErrorKind::EmptyBlock, "think");
    if (critiqueText.empty())
        throw JudgmentParseError(JudgmentErrorKind::EmptyBlock, "critique");

    return Judgment(std::string(thinkText), std::string(critiqueText), parse_score(score.body));
}

auto format_score(double score) -> std::string
{
    if (!(score >= 0.0 && score <= 1.0))
        throw ValidationError("score outside [0, 1]");
    auto text = fmt::format("{:.6f}", score);
    while (text.back() == '0')
        text.pop_back();
    if (text.back() == '.')
        text.pop_back();
    return text;
}

auto render_judgment(const Judgment& judgment) -> std::string
{
    return fmt::format("<think>\n{}\n</think>\n<critique>\n{}\n</critique>\n<score>{}</score>\n", judgment.think(),
                       judgment.critique(), format_score(judgment.score()));
}

auto render_trajectory(std::string_view task_prompt, const Trajectory& traj) -> std::string
{
    auto out = fmt::format("task: {}\nstage: {}\n", task_prompt, static_cast<int>(traj.stage));
    auto nextCall = std::size_t { 0 };
    auto step = 0;
    for (auto const& frame: decode_frames(traj.actions))
    {
        ++step;
        switch (frame.kind)
        {
            case Frame::Kind::Call:
                if (nextCall < traj.tool_calls.size())
                {
                    auto const& c = traj.tool_calls[nextCall++];
                    out += fmt::format("step {}: {}(\"{}\") -> {}\n", step, to_string(c.tool), c.args, c.observation);
                }
                else
                    out += fmt::format("step {}: {} not executed: step budget exhausted\n", step, to_string(frame.tool));
                break;
            case Frame::Kind::Malformed:
            {
                auto symbols = std::string {};
                for (auto i = frame.begin; i < frame.end; ++i)
                    symbols += (symbols.empty() ? "" : " ") + std::string(to_string(traj.actions[i]));
                out += fmt::format("step {}: malformed call [{}]\n", step, symbols);
                break;
            }
            case Frame::Kind::Answer:
            case Frame::Kind::Stop: break;
        }
    }
    out += traj.final_answer.empty() ? "final answer: (none)\n" : fmt::format("final answer: {}\n", traj.final_answer);
    return out;
}

auto judge(JudgeBackend& backend, const Task& task, const Trajectory& traj) -> Judgment
{
    return parse_judgment(backend.evaluate(task, traj));
}

} // namespace reagent
