// SPDX-License-Identifier: Apache-2.0
#include <reagent/external_judge.hpp>
#include <reagent/random.hpp>
#include <reagent/records.hpp>

#include <httplib.h>

#include <fstream>

namespace reagent
{

namespace
{

// Instructions sent with every request under the default template id.
constexpr std::string_view kTrajectoryJudgeTemplate = R"(Review the agent trajectory below and reply with exactly three tagged blocks, in this order:

<think>
Your private assessment of how the agent used its tools: whether each call was needed, whether arguments came from the task or from earlier tool output, whether any call was repeated or malformed, and whether the final answer is backed by a tool result.
</think>

<critique>
A short note addressed to the agent naming the concrete problems you found. Do not state or hint at the correct answer.
</critique>

<score>
A decimal between 0 and 1 with at most six fractional digits. 1 means the tool use was sound throughout; 0 means it was wrong or harmful.
</score>

Write nothing that reveals the answer, and nothing outside the three blocks.
)";

constexpr std::string_view kCacheSchema = "reagent.judge_cache";

} // namespace

auto judge_template(std::string_view template_id) -> std::string_view
{
    if (template_id == kDefaultTemplateId)
        return kTrajectoryJudgeTemplate;
    throw ConfigError("unknown judge template '" + std::string(template_id) + "'");
}

auto to_json(const JudgeRequest& r) -> nlohmann::json
{
    return { { "task_prompt", r.task_prompt }, { "trajectory_text", r.trajectory_text }, { "template_id", r.template_id } };
}

auto request_from_json(const nlohmann::json& j) -> JudgeRequest
{
    auto get = [&](const char* name) {
        if (!j.contains(name) || !j[name].is_string())
            throw DecodeError(name, "missing or not a string");
        return j[name].get<std::string>();
    };
    return JudgeRequest { .task_prompt = get("task_prompt"),
                          .trajectory_text = get("trajectory_text"),
                          .template_id = get("template_id") };
}

auto to_json(const JudgeResponse& r) -> nlohmann::json
{
    return { { "raw_text", r.raw_text } };
}

auto response_from_json(const nlohmann::json& j) -> JudgeResponse
{
    if (!j.is_object() || !j.contains("raw_text") || !j["raw_text"].is_string())
        throw DecodeError("raw_text", "missing or not a string");
    return JudgeResponse { .raw_text = j["raw_text"].get<std::string>() };
}

// -- HTTP transport --------------------------------------------------------------

HttpJudgeTransport::HttpJudgeTransport(std::string endpoint)
{
    auto const scheme = endpoint.find("://");
    if (scheme == std::string::npos || endpoint.substr(0, scheme) != "http")
        throw ConfigError("judge endpoint must be an http:// URL, got '" + endpoint + "'");
    auto const pathStart = endpoint.find('/', scheme + 3);
    _origin = endpoint.substr(0, pathStart);
    _path = pathStart == std::string::npos ? "/" : endpoint.substr(pathStart);
}

auto HttpJudgeTransport::send(const JudgeRequest& request, std::chrono::milliseconds timeout) -> JudgeResponse
{
    auto client = httplib::Client(_origin);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    auto const result = client.Post(_path, to_json(request).dump(), "application/json");
    if (!result)
        throw TransportError("judge request failed: " + httplib::to_string(result.error()));
    if (result->status != 200)
        throw TransportError("judge endpoint returned HTTP " + std::to_string(result->status));
    auto body = nlohmann::json::parse(result->body, nullptr, false);
    if (body.is_discarded())
        throw TransportError("judge endpoint returned invalid JSON");
    try
    {
        return response_from_json(body);
    }
    catch (const DecodeError& e)
    {
        throw TransportError(e.what());
    }
}

// -- ExternalJudge ---------------------------------------------------------------

ExternalJudge::ExternalJudge(std::shared_ptr<JudgeTransport> transport, ExternalJudgeConfig config):
    _transport(std::move(transport)), _config(std::move(config))
{
    if (!_transport)
        throw ConfigError("external judge needs a transport");
    if (_config.retries < 0)
        throw ConfigError("judge retry count must be >= 0");
    if (_config.max_inflight < 1)
        throw ConfigError("judge max_inflight must be >= 1");
    judge_template(_config.template_id);
    load_cache();
}

auto ExternalJudge::cache_key(const JudgeRequest& request) -> std::uint64_t
{
    auto h = fnv1a(request.template_id);
    h = fnv1a(request.task_prompt, fnv1a("\x1e", h));
    return fnv1a(request.trajectory_text, fnv1a("\x1e", h));
}

auto ExternalJudge::cache_size() const -> std::size_t
{
    auto lock = std::scoped_lock(_cacheMutex);
    return _cache.size();
}

auto ExternalJudge::evaluate(const Task& task, const Trajectory& traj) -> std::string
{
    auto const request = JudgeRequest { .task_prompt = task.prompt,
                                        .trajectory_text = render_trajectory(task.prompt, traj),
                                        .template_id = _config.template_id };
    auto const key = cache_key(request);
    {
        auto lock = std::scoped_lock(_cacheMutex);
        if (auto it = _cache.find(key); it != _cache.end())
            return it->second;
    }

    auto raw = send_with_retries(request);
    {
        auto lock = std::scoped_lock(_cacheMutex);
        if (_cache.emplace(key, raw).second)
            persist(key, raw);
    }
    return raw;
}

auto ExternalJudge::send_with_retries(const JudgeRequest& request) -> std::string
{
    {
        auto lock = std::unique_lock(_slotMutex);
        _slotFreed.wait(lock, [&] { return _inflight < _config.max_inflight; });
        ++_inflight;
    }
    struct SlotGuard
    {
        ExternalJudge& self;
        ~SlotGuard()
        {
            {
                auto lock = std::scoped_lock(self._slotMutex);
                --self._inflight;
            }
            self._slotFreed.notify_one();
        }
    } guard { *this };

    auto lastError = std::string {};
    for (auto attempt = 0; attempt <= _config.retries; ++attempt)
    {
        try
        {
            ++_sent;
            return _transport->send(request, _config.timeout).raw_text;
        }
        catch (const TransportError& e)
        {
            lastError = e.what();
        }
    }
    throw JudgeUnavailable("judge unavailable after " + std::to_string(_config.retries + 1)
                           + " attempt(s): " + lastError);
}

void ExternalJudge::load_cache()
{
    if (!_config.cache_path || !std::filesystem::exists(*_config.cache_path))
        return;
    for (auto const& line: read_lines(*_config.cache_path))
    {
        auto doc = nlohmann::json::parse(line, nullptr, false);
        if (doc.is_discarded() || !doc.is_object() || doc.value("schema", "") != kCacheSchema)
            continue; // torn or foreign line
        if (!doc.contains("key") || !doc.contains("raw_text"))
            continue;
        _cache.emplace(parse_hex64(doc["key"].get<std::string>()), doc["raw_text"].get<std::string>());
    }
}

void ExternalJudge::persist(std::uint64_t key, const std::string& raw)
{
    if (!_config.cache_path)
        return;
    auto out = std::ofstream(*_config.cache_path, std::ios::app | std::ios::binary);
    auto const doc = nlohmann::json { { "schema", kCacheSchema }, { "version", kRecordVersion }, { "key", hex64(key) }, { "raw_text", raw } };
    out << doc.dump() << '\n';
}

} // namespace reagent
