// SPDX-License-Identifier: Apache-2.0
#include <reagent/errors.hpp>
#include <reagent/metrics.hpp>
#include <reagent/records.hpp>

#include <nlohmann/json.hpp>

#include <sstream>

namespace reagent
{

namespace
{

constexpr std::string_view kMetricsSchema = "reagent.metrics";

auto number(const nlohmann::json& doc, const char* name) -> double
{
    if (!doc.contains(name))
        throw DecodeError(name, "missing");
    if (!doc[name].is_number())
        throw DecodeError(name, "expected number");
    return doc[name].get<double>();
}

auto count(const nlohmann::json& doc, const char* name) -> std::uint64_t
{
    if (!doc.contains(name))
        throw DecodeError(name, "missing");
    if (!doc[name].is_number_unsigned())
        throw DecodeError(name, "expected non-negative integer");
    return doc[name].get<std::uint64_t>();
}

} // namespace

auto serialize_metrics(const MetricsRecord& r) -> std::string
{
    auto doc = nlohmann::json::object();
    doc["schema"] = kMetricsSchema;
    doc["version"] = kRecordVersion;
    doc["step"] = r.step;
    doc["J"] = r.objective;
    doc["mean_reward"] = r.mean_reward;
    doc["mean_rule"] = r.mean_rule;
    doc["mean_model"] = r.mean_model;
    doc["mean_KL"] = r.mean_kl;
    doc["clip_fraction"] = r.clip_fraction;
    doc["grad_norm"] = r.grad_norm;
    doc["judge_failures"] = r.judge_failures;
    return doc.dump();
}

auto deserialize_metrics(std::string_view line) -> MetricsRecord
{
    auto const doc = nlohmann::json::parse(line.begin(), line.end(), nullptr, false);
    if (doc.is_discarded() || !doc.is_object())
        throw DecodeError("<record>", "truncated or invalid JSON");
    if (doc.value("schema", "") != kMetricsSchema)
        throw DecodeError("schema", "expected reagent.metrics");
    if (!doc.contains("version") || doc["version"] != kRecordVersion)
        throw DecodeError("version", "missing or unsupported");
    return MetricsRecord {
        .step = count(doc, "step"),
        .objective = number(doc, "J"),
        .mean_reward = number(doc, "mean_reward"),
        .mean_rule = number(doc, "mean_rule"),
        .mean_model = number(doc, "mean_model"),
        .mean_kl = number(doc, "mean_KL"),
        .clip_fraction = number(doc, "clip_fraction"),
        .grad_norm = number(doc, "grad_norm"),
        .judge_failures = doc.contains("judge_failures") ? count(doc, "judge_failures") : 0,
    };
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path, bool truncate)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    _out.open(path, std::ios::binary | (truncate ? std::ios::trunc : std::ios::app));
    if (!_out)
        throw Error("cannot open metrics stream " + path.string());
}

void MetricsWriter::write(const MetricsRecord& record)
{
    _out << serialize_metrics(record) << '\n';
    _out.flush();
}

auto read_metrics(const std::filesystem::path& path) -> MetricsReadResult
{
    auto in = std::ifstream(path, std::ios::binary);
    if (!in)
        throw Error("cannot open metrics stream " + path.string());
    auto const content = std::string(std::istreambuf_iterator<char>(in), {});

    auto result = MetricsReadResult {};
    auto start = std::size_t { 0 };
    while (start < content.size())
    {
        auto const nl = content.find('\n', start);
        auto const complete = nl != std::string::npos;
        auto const line = std::string_view(content).substr(start, complete ? nl - start : std::string::npos);
        start = complete ? nl + 1 : content.size();
        if (line.empty())
            continue;
        if (!complete)
        {
            try
            {
                result.records.push_back(deserialize_metrics(line));
            }
            catch (const DecodeError&)
            {
                result.torn_tail = true; // crash mid-write
            }
            break;
        }
        result.records.push_back(deserialize_metrics(line));
    }
    return result;
}

void truncate_metrics(const std::filesystem::path& path, std::uint64_t step)
{
    if (!std::filesystem::exists(path))
        return;
    auto keep = std::vector<std::string> {};
    for (auto const& r: read_metrics(path).records)
        if (r.step < step)
            keep.push_back(serialize_metrics(r));
    write_lines(path, keep);
}

} // namespace reagent
