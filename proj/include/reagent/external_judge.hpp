// SPDX-License-Identifier: Apache-2.0
#pragma once

// Client side of the external judge contract. The payload is transport
// agnostic:
//   request  {"task_prompt": str, "trajectory_text": str, "template_id": str}
//   response {"raw_text": str}
// HttpJudgeTransport carries it as a JSON POST; tests substitute in-memory transports.

#include <reagent/judge.hpp>

#include <nlohmann/json.hpp>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>

namespace reagent
{

inline constexpr std::string_view kDefaultTemplateId = "trajectory-judgment-v1";

/// Instruction text for a template id; throws ConfigError for unknown ids.
auto judge_template(std::string_view template_id) -> std::string_view;

struct JudgeRequest
{
    std::string task_prompt;
    std::string trajectory_text;
    std::string template_id;

    auto operator==(const JudgeRequest&) const -> bool = default;
};

struct JudgeResponse
{
    std::string raw_text;
};

auto to_json(const JudgeRequest& r) -> nlohmann::json;
auto request_from_json(const nlohmann::json& j) -> JudgeRequest;
auto to_json(const JudgeResponse& r) -> nlohmann::json;
auto response_from_json(const nlohmann::json& j) -> JudgeResponse;

/// Timeouts, refused connections and bad payloads. Retried by ExternalJudge.
class TransportError: public Error
{
  public:
    using Error::Error;
};

class JudgeTransport
{
  public:
    virtual ~JudgeTransport() = default;
    virtual auto send(const JudgeRequest& request, std::chrono::milliseconds timeout) -> JudgeResponse = 0;
};

/// POSTs the request as JSON to `endpoint` (e.g. http://localhost:8080/judge).
class HttpJudgeTransport final: public JudgeTransport
{
  public:
    explicit HttpJudgeTransport(std::string endpoint);
    auto send(const JudgeRequest& request, std::chrono::milliseconds timeout) -> JudgeResponse override;

  private:
    std::string _origin;
    std::string _path;
};

struct ExternalJudgeConfig
{
    std::chrono::milliseconds timeout { 30'000 };
    int retries = 2; // additional attempts after the first
    std::size_t max_inflight = 4;
    std::string template_id = std::string(kDefaultTemplateId);
    std::optional<std::filesystem::path> cache_path; // line-delimited cache records
};

/// Request/response judge client with retries, bounded concurrency and a
/// content-hash cache. Raw text is cached as returned; parsing happens in judge().
class ExternalJudge final: public JudgeBackend
{
  public:
    ExternalJudge(std::shared_ptr<JudgeTransport> transport, ExternalJudgeConfig config);

    auto evaluate(const Task& task, const Trajectory& traj) -> std::string override;

    [[nodiscard]] auto requests_sent() const noexcept -> std::size_t { return _sent.load(); }
    [[nodiscard]] auto cache_size() const -> std::size_t;

    static auto cache_key(const JudgeRequest& request) -> std::uint64_t;

  private:
    auto send_with_retries(const JudgeRequest& request) -> std::string;
    void load_cache();
    void persist(std::uint64_t key, const std::string& raw);

    std::shared_ptr<JudgeTransport> _transport;
    ExternalJudgeConfig _config;

    mutable std::mutex _cacheMutex;
    std::unordered_map<std::uint64_t, std::string> _cache;

    std::mutex _slotMutex;
    std::condition_variable _slotFreed;
    std::size_t _inflight = 0;

    std::atomic<std::size_t> _sent { 0 };
};

} // namespace reagent
