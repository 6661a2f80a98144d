// SPDX-License-Identifier: Apache-2.0
#include <reagent/core_types.hpp>
#include <reagent/errors.hpp>

#include <cctype>
#include <cmath>

namespace reagent
{

namespace
{

constexpr std::array<std::string_view, 4> kFamilyNames = { "arithmetic", "lookup", "file_extract", "multi_hop" };
constexpr std::array<std::string_view, 6> kToolNames = {
    "Search", "WebBrowse", "PythonCode", "FileReader", "ImageDescriptor", "AudioConverter",
};
constexpr std::array<std::string_view, kVocabSize> kSymbolNames = {
    "<end>",  "<answer>",        "Search",         "WebBrowse", "PythonCode",   "FileReader",
    "ImageDescriptor", "AudioConverter", "$query", "$observation", "$guess",
};

auto lower(std::string_view text) -> std::string
{
    auto out = std::string(text);
    for (auto& c: out)
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

} // namespace

auto to_string(TaskFamily family) -> std::string_view
{
    return kFamilyNames.at(static_cast<std::size_t>(family));
}

auto to_string(Tool tool) -> std::string_view
{
    return kToolNames.at(static_cast<std::size_t>(tool));
}

auto to_string(Symbol symbol) -> std::string_view
{
    return kSymbolNames.at(static_cast<std::size_t>(symbol));
}

auto parse_task_family(std::string_view text) -> std::optional<TaskFamily>
{
    auto const key = lower(text);
    for (auto f: kAllFamilies)
        if (to_string(f) == key)
            return f;
    if (key == "fileextract")
        return TaskFamily::FileExtract;
    if (key == "multihop")
        return TaskFamily::MultiHop;
    return std::nullopt;
}

auto parse_tool(std::string_view text) -> std::optional<Tool>
{
    for (auto t: kAllTools)
        if (to_string(t) == text)
            return t;
    return std::nullopt;
}

auto is_tool_symbol(Symbol s) -> bool
{
    return s >= Symbol::ToolSearch && s <= Symbol::ToolAudioConverter;
}

auto is_arg_symbol(Symbol s) -> bool
{
    return s >= Symbol::ArgQuery && s <= Symbol::ArgGuess;
}

auto tool_of(Symbol s) -> Tool
{
    if (!is_tool_symbol(s))
        throw ValidationError("symbol " + std::string(to_string(s)) + " does not name a tool");
    return static_cast<Tool>(static_cast<int>(s) - static_cast<int>(Symbol::ToolSearch));
}

auto symbol_of(Tool t) -> Symbol
{
    return static_cast<Symbol>(static_cast<int>(Symbol::ToolSearch) + static_cast<int>(t));
}

void validate_trajectory(const Trajectory& t, std::size_t max_tool_calls)
{
    if (t.old_logp.size() != t.actions.size())
        throw ValidationError("trajectory: old_logp length " + std::to_string(t.old_logp.size())
                              + " != actions length " + std::to_string(t.actions.size()));
    if (t.tool_calls.size() > max_tool_calls)
        throw ValidationError("trajectory: " + std::to_string(t.tool_calls.size())
                              + " tool calls exceed the cap of " + std::to_string(max_tool_calls));
    for (auto const& call: t.tool_calls)
        if (call.observation.empty())
            throw ValidationError("trajectory: executed tool call without observation");
    for (auto lp: t.old_logp)
        if (!std::isfinite(lp) || lp > 0.0)
            throw ValidationError("trajectory: old_logp entries must be finite and <= 0");
}

Judgment::Judgment(std::string think, std::string critique, double score):
    _think(std::move(think)), _critique(std::move(critique)), _score(score)
{
    if (!(score >= 0.0 && score <= 1.0))
        throw ValidationError("judgment score " + std::to_string(score) + " outside [0, 1]");
    if (_think.empty())
        throw ValidationError("judgment think block is empty");
    if (_critique.empty())
        throw ValidationError("judgment critique block is empty");
}

auto normalize_answer(std::string_view raw) -> std::string
{
    auto out = std::string {};
    out.reserve(raw.size());
    auto pendingSpace = false;
    for (auto ch: raw)
    {
        auto const c = static_cast<unsigned char>(ch);
        if (std::isspace(c))
        {
            pendingSpace = !out.empty();
            continue;
        }
        if (pendingSpace)
            out.push_back(' ');
        pendingSpace = false;
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    // Trailing periods go, together with any space they leave exposed.
    while (!out.empty() && (out.back() == '.' || out.back() == ' '))
        out.pop_back();
    return out;
}

} // namespace reagent
