// SPDX-License-Identifier: Apache-2.0
#include <reagent/errors.hpp>
#include <reagent/records.hpp>

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

namespace reagent
{

using nlohmann::json;

namespace
{

constexpr std::string_view kTaskSchema = "reagent.task";
constexpr std::string_view kTrajectorySchema = "reagent.trajectory";
constexpr std::string_view kJudgmentSchema = "reagent.judgment";

auto parse_record(std::string_view line, std::string_view schema) -> json
{
    auto doc = json::parse(line.begin(), line.end(), nullptr, false);
    if (doc.is_discarded())
        throw DecodeError("<record>", "truncated or invalid JSON");
    if (!doc.is_object())
        throw DecodeError("<record>", "expected an object");
    if (!doc.contains("schema") || !doc["schema"].is_string() || doc["schema"].get<std::string>() != schema)
        throw DecodeError("schema", "expected '" + std::string(schema) + "'");
    if (!doc.contains("version") || !doc["version"].is_number_integer())
        throw DecodeError("version", "missing schema version");
    if (doc["version"].get<int>() != kRecordVersion)
        throw DecodeError("version", "unsupported version " + doc["version"].dump());
    return doc;
}

auto field(const json& doc, const char* name) -> const json&
{
    if (!doc.contains(name))
        throw DecodeError(name, "missing");
    return doc[name];
}

auto string_field(const json& doc, const char* name) -> std::string
{
    auto const& v = field(doc, name);
    if (!v.is_string())
        throw DecodeError(name, "expected string");
    return v.get<std::string>();
}

auto hex_field(const json& doc, const char* name) -> std::uint64_t
{
    auto const text = string_field(doc, name);
    try
    {
        return parse_hex64(text);
    }
    catch (const std::exception& e)
    {
        throw DecodeError(name, e.what());
    }
}

auto header(std::string_view schema) -> json
{
    auto doc = json::object();
    doc["schema"] = schema;
    doc["version"] = kRecordVersion;
    return doc;
}

} // namespace

auto hex64(std::uint64_t value) -> std::string
{
    char buf[19];
    std::snprintf(buf, sizeof buf, "0x%016llx", static_cast<unsigned long long>(value));
    return buf;
}

auto parse_hex64(std::string_view text) -> std::uint64_t
{
    if (text.size() < 3 || text.size() > 18 || text.substr(0, 2) != "0x")
        throw std::invalid_argument("expected 0x-prefixed hex, got '" + std::string(text) + "'");
    auto value = std::uint64_t { 0 };
    for (auto c: text.substr(2))
    {
        value <<= 4;
        if (c >= '0' && c <= '9')
            value |= static_cast<std::uint64_t>(c - '0');
        else if (c >= 'a' && c <= 'f')
            value |= static_cast<std::uint64_t>(c - 'a' + 10);
        else
            throw std::invalid_argument("bad hex digit in '" + std::string(text) + "'");
    }
    return value;
}

auto serialize_task(const Task& task) -> std::string
{
    auto doc = header(kTaskSchema);
    doc["id"] = task.id;
    doc["family"] = to_string(task.family);
    doc["prompt"] = task.prompt;
    doc["ground_truth"] = task.ground_truth;
    doc["env_seed"] = hex64(task.env_seed);
    return doc.dump();
}

auto deserialize_task(std::string_view line) -> Task
{
    auto const doc = parse_record(line, kTaskSchema);
    auto task = Task {};
    task.id = string_field(doc, "id");
    auto const family = parse_task_family(string_field(doc, "family"));
    if (!family)
        throw DecodeError("family", "unknown task family");
    task.family = *family;
    task.prompt = string_field(doc, "prompt");
    task.ground_truth = string_field(doc, "ground_truth");
    task.env_seed = hex_field(doc, "env_seed");
    return task;
}

auto serialize_trajectory(const Trajectory& t) -> std::string
{
    auto doc = header(kTrajectorySchema);
    doc["task_id"] = t.task_id;
    doc["stage"] = static_cast<int>(t.stage);
    auto actions = json::array();
    for (auto a: t.actions)
        actions.push_back(static_cast<int>(a));
    doc["actions"] = std::move(actions);
    auto calls = json::array();
    for (auto const& c: t.tool_calls)
        calls.push_back({ { "tool", to_string(c.tool) }, { "args", c.args }, { "observation", c.observation } });
    doc["tool_calls"] = std::move(calls);
    doc["final_answer"] = t.final_answer;
    for (auto lp: t.old_logp)
        if (!std::isfinite(lp))
            throw ValidationError("cannot serialize non-finite old_logp");
    doc["old_logp"] = t.old_logp;
    doc["context_fingerprint"] = hex64(t.context_fingerprint);
    return doc.dump();
}

auto deserialize_trajectory(std::string_view line) -> Trajectory
{
    auto const doc = parse_record(line, kTrajectorySchema);
    auto t = Trajectory {};
    t.task_id = string_field(doc, "task_id");

    auto const& stage = field(doc, "stage");
    if (!stage.is_number_integer() || (stage.get<int>() != 1 && stage.get<int>() != 2))
        throw DecodeError("stage", "expected 1 or 2, got " + stage.dump());
    t.stage = static_cast<Stage>(stage.get<int>());

    auto const& actions = field(doc, "actions");
    if (!actions.is_array())
        throw DecodeError("actions", "expected array");
    for (auto const& a: actions)
    {
        if (!a.is_number_integer() || a.get<int>() < 0 || a.get<int>() >= static_cast<int>(kVocabSize))
            throw DecodeError("actions", "symbol out of vocabulary: " + a.dump());
        t.actions.push_back(static_cast<Symbol>(a.get<int>()));
    }

    auto const& calls = field(doc, "tool_calls");
    if (!calls.is_array())
        throw DecodeError("tool_calls", "expected array");
    for (auto const& c: calls)
    {
        if (!c.is_object())
            throw DecodeError("tool_calls", "expected object entries");
        auto const tool = parse_tool(string_field(c, "tool"));
        if (!tool)
            throw DecodeError("tool_calls.tool", "unknown tool " + c["tool"].dump());
        t.tool_calls.push_back(ToolCall {
            .tool = *tool,
            .args = string_field(c, "args"),
            .observation = string_field(c, "observation"),
        });
    }

    t.final_answer = string_field(doc, "final_answer");

    auto const& logp = field(doc, "old_logp");
    if (!logp.is_array())
        throw DecodeError("old_logp", "expected array");
    for (auto const& v: logp)
    {
        if (!v.is_number())
            throw DecodeError("old_logp", "expected numbers");
        t.old_logp.push_back(v.get<double>());
    }
    if (t.old_logp.size() != t.actions.size())
        throw DecodeError("old_logp", "length differs from actions");

    t.context_fingerprint = hex_field(doc, "context_fingerprint");
    return t;
}

auto serialize_judgment(const Judgment& j) -> std::string
{
    auto doc = header(kJudgmentSchema);
    doc["think"] = j.think();
    doc["critique"] = j.critique();
    doc["score"] = j.score();
    return doc.dump();
}

auto deserialize_judgment(std::string_view line) -> Judgment
{
    auto const doc = parse_record(line, kJudgmentSchema);
    auto const& score = field(doc, "score");
    if (!score.is_number())
        throw DecodeError("score", "expected number");
    try
    {
        return Judgment(string_field(doc, "think"), string_field(doc, "critique"), score.get<double>());
    }
    catch (const ValidationError& e)
    {
        throw DecodeError("score", e.what());
    }
}

auto read_lines(const std::filesystem::path& path) -> std::vector<std::string>
{
    auto in = std::ifstream(path);
    if (!in)
        throw Error("cannot open " + path.string());
    auto lines = std::vector<std::string> {};
    auto line = std::string {};
    while (std::getline(in, line))
        if (!line.empty())
            lines.push_back(line);
    return lines;
}

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    auto out = std::ofstream(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error("cannot write " + path.string());
    for (auto const& l: lines)
        out << l << '\n';
}

auto load_tasks(const std::filesystem::path& path) -> std::vector<Task>
{
    auto tasks = std::vector<Task> {};
    for (auto const& l: read_lines(path))
        tasks.push_back(deserialize_task(l));
    return tasks;
}

void save_tasks(const std::filesystem::path& path, const std::vector<Task>& tasks)
{
    auto lines = std::vector<std::string> {};
    for (auto const& t: tasks)
        lines.push_back(serialize_task(t));
    write_lines(path, lines);
}

auto load_trajectories(const std::filesystem::path& path) -> std::vector<Trajectory>
{
    auto out = std::vector<Trajectory> {};
    for (auto const& l: read_lines(path))
        out.push_back(deserialize_trajectory(l));
    return out;
}

void save_trajectories(const std::filesystem::path& path, const std::vector<Trajectory>& trajectories)
{
    auto lines = std::vector<std::string> {};
    for (auto const& t: trajectories)
        lines.push_back(serialize_trajectory(t));
    write_lines(path, lines);
}

} // namespace reagent
