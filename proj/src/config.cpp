// SPDX-License-Identifier: Apache-2.0
#include <reagent/config.hpp>
#include <reagent/errors.hpp>

#include <fmt/format.h>

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

namespace reagent
{

namespace
{

auto trim(std::string_view s) -> std::string_view
{
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front())))
        s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())))
        s.remove_suffix(1);
    return s;
}

auto bad_value(std::string_view key, std::string_view value, std::string_view expected) -> ConfigError
{
    return ConfigError(fmt::format("{}: expected {}, got '{}'", key, expected, value));
}

template <typename T>
auto parse_integer(std::string_view key, std::string_view value) -> T
{
    auto out = T {};
    auto const [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc {} || ptr != value.data() + value.size())
        throw bad_value(key, value, "an integer");
    return out;
}

auto parse_real(std::string_view key, std::string_view value) -> double
{
    auto out = 0.0;
    auto const [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc {} || ptr != value.data() + value.size() || !std::isfinite(out))
        throw bad_value(key, value, "a finite number");
    return out;
}

auto parse_bool(std::string_view key, std::string_view value) -> bool
{
    if (value == "true" || value == "1")
        return true;
    if (value == "false" || value == "0")
        return false;
    throw bad_value(key, value, "true or false");
}

auto parse_families(std::string_view key, std::string_view value) -> std::vector<TaskFamily>
{
    auto out = std::vector<TaskFamily> {};
    while (!value.empty())
    {
        auto const comma = value.find(',');
        auto const item = trim(value.substr(0, comma));
        auto const family = parse_task_family(item);
        if (!family)
            throw bad_value(key, item, "a task family");
        out.push_back(*family);
        value = comma == std::string_view::npos ? std::string_view {} : value.substr(comma + 1);
    }
    if (out.empty())
        throw bad_value(key, value, "at least one task family");
    return out;
}

auto families_text(const std::vector<TaskFamily>& families) -> std::string
{
    auto out = std::string {};
    for (auto f: families)
        out += (out.empty() ? "" : ",") + std::string(to_string(f));
    return out;
}

auto optional_path(const std::optional<std::filesystem::path>& p) -> std::string
{
    return p ? p->string() : std::string {};
}

auto to_optional_path(std::string_view value) -> std::optional<std::filesystem::path>
{
    if (value.empty())
        return std::nullopt;
    return std::filesystem::path(value);
}

struct Field
{
    std::string_view key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, std::string_view)> set;
};

#define REAL_FIELD(name, member)                                                                                      \
    Field { name, [](const RunConfig& c) { return fmt::format("{}", c.member); },                                     \
            [](RunConfig& c, std::string_view v) { c.member = parse_real(name, v); } }
#define SIZE_FIELD(name, member)                                                                                      \
    Field { name, [](const RunConfig& c) { return fmt::format("{}", c.member); },                                     \
            [](RunConfig& c, std::string_view v) { c.member = parse_integer<std::size_t>(name, v); } }
#define U64_FIELD(name, member)                                                                                       \
    Field { name, [](const RunConfig& c) { return fmt::format("{}", c.member); },                                     \
            [](RunConfig& c, std::string_view v) { c.member = parse_integer<std::uint64_t>(name, v); } }
#define BOOL_FIELD(name, member)                                                                                      \
    Field { name, [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); },                       \
            [](RunConfig& c, std::string_view v) { c.member = parse_bool(name, v); } }
#define PATH_FIELD(name, member)                                                                                      \
    Field { name, [](const RunConfig& c) { return optional_path(c.member); },                                         \
            [](RunConfig& c, std::string_view v) { c.member = to_optional_path(v); } }

auto fields() -> const std::vector<Field>&
{
    static auto const table = std::vector<Field> {
        Field { "variant", [](const RunConfig& c) { return std::string(to_string(c.variant)); },
                [](RunConfig& c, std::string_view v) {
                    auto const parsed = parse_variant(v);
                    if (!parsed)
                        throw bad_value("variant", v, "one of c, r, u, baseline");
                    c.variant = *parsed;
                } },
        U64_FIELD("seed", seed),
        SIZE_FIELD("steps", steps),

        Field { "tasks.train_families", [](const RunConfig& c) { return families_text(c.train_families); },
                [](RunConfig& c, std::string_view v) { c.train_families = parse_families("tasks.train_families", v); } },
        Field { "tasks.eval_families", [](const RunConfig& c) { return families_text(c.eval_families); },
                [](RunConfig& c, std::string_view v) { c.eval_families = parse_families("tasks.eval_families", v); } },
        SIZE_FIELD("tasks.train_count", train_tasks),
        SIZE_FIELD("tasks.eval_per_family", eval_tasks_per_family),
        U64_FIELD("tasks.seed", task_seed),
        PATH_FIELD("tasks.train_corpus", train_corpus),
        PATH_FIELD("tasks.eval_corpus", eval_corpus),

        SIZE_FIELD("training.group_size", training.group_size),
        REAL_FIELD("training.clip_eps", training.clip_eps),
        REAL_FIELD("training.kl_beta", training.kl_beta),
        REAL_FIELD("training.learning_rate", training.learning_rate),
        SIZE_FIELD("training.batch_tasks", training.batch_tasks),
        SIZE_FIELD("training.minibatch_tasks", training.minibatch_tasks),
        Field { "training.optimizer",
                [](const RunConfig& c) { return std::string(c.training.optimizer == OptimizerKind::Adam ? "adam" : "sgd"); },
                [](RunConfig& c, std::string_view v) {
                    if (v == "sgd")
                        c.training.optimizer = OptimizerKind::Sgd;
                    else if (v == "adam")
                        c.training.optimizer = OptimizerKind::Adam;
                    else
                        throw bad_value("training.optimizer", v, "sgd or adam");
                } },
        REAL_FIELD("training.adam_beta1", training.adam_beta1),
        REAL_FIELD("training.adam_beta2", training.adam_beta2),
        REAL_FIELD("training.adam_epsilon", training.adam_epsilon),
        Field { "training.reference",
                [](const RunConfig& c) {
                    return std::string(c.training.reference == ReferencePolicy::Initial ? "initial" : "batch_start");
                },
                [](RunConfig& c, std::string_view v) {
                    if (v == "initial")
                        c.training.reference = ReferencePolicy::Initial;
                    else if (v == "batch_start")
                        c.training.reference = ReferencePolicy::BatchStart;
                    else
                        throw bad_value("training.reference", v, "initial or batch_start");
                } },

        REAL_FIELD("reward.lambda", reward.lambda),
        BOOL_FIELD("reward.format_penalty", reward.format_penalty_enabled),

        SIZE_FIELD("rollout.max_steps", caps.max_steps),
        SIZE_FIELD("rollout.max_len", caps.max_len),
        REAL_FIELD("rollout.temperature", caps.temperature),
        BOOL_FIELD("rollout.stage2", stage2),
        SIZE_FIELD("rollout.critique_chars", critique_chars),
        REAL_FIELD("refine.inject_flaw_rate", inject_flaw_rate),

        REAL_FIELD("eval.temperature", eval.temperature),
        SIZE_FIELD("eval.max_steps", eval.max_steps),
        SIZE_FIELD("eval.max_len", eval.max_len),
        SIZE_FIELD("eval.k", eval.k),

        REAL_FIELD("judge.penalty.repeated_call", penalties.repeated_call),
        REAL_FIELD("judge.penalty.missing_required_tool", penalties.missing_required_tool),
        REAL_FIELD("judge.penalty.unverified_answer", penalties.unverified_answer),
        REAL_FIELD("judge.penalty.malformed_call", penalties.malformed_call),
        REAL_FIELD("judge.penalty.hallucinated_resource", penalties.hallucinated_resource),
        REAL_FIELD("judge.penalty.over_budget", penalties.over_budget),
        REAL_FIELD("judge.penalty.no_answer", penalties.no_answer),
        Field { "judge.backend", [](const RunConfig& c) { return c.judge_backend; },
                [](RunConfig& c, std::string_view v) {
                    if (v != "oracle" && v != "external")
                        throw bad_value("judge.backend", v, "oracle or external");
                    c.judge_backend = std::string(v);
                } },
        Field { "judge.endpoint", [](const RunConfig& c) { return c.judge_endpoint; },
                [](RunConfig& c, std::string_view v) { c.judge_endpoint = std::string(v); } },
        Field { "judge.timeout_ms", [](const RunConfig& c) { return fmt::format("{}", c.judge_timeout.count()); },
                [](RunConfig& c, std::string_view v) {
                    c.judge_timeout = std::chrono::milliseconds(parse_integer<std::int64_t>("judge.timeout_ms", v));
                } },
        Field { "judge.retries", [](const RunConfig& c) { return fmt::format("{}", c.judge_retries); },
                [](RunConfig& c, std::string_view v) { c.judge_retries = parse_integer<int>("judge.retries", v); } },
        SIZE_FIELD("judge.max_inflight", judge_max_inflight),
        Field { "judge.template", [](const RunConfig& c) { return c.judge_template; },
                [](RunConfig& c, std::string_view v) { c.judge_template = std::string(v); } },
        PATH_FIELD("judge.cache", judge_cache),

        SIZE_FIELD("policy.feature_dim", feature_dim),
        REAL_FIELD("policy.init_scale", init_scale),
        PATH_FIELD("policy.init_checkpoint", init_checkpoint),

        Field { "output_dir", [](const RunConfig& c) { return c.output_dir.string(); },
                [](RunConfig& c, std::string_view v) { c.output_dir = std::filesystem::path(v); } },
        SIZE_FIELD("threads", threads),
        SIZE_FIELD("checkpoint_every", checkpoint_every),
    };
    return table;
}

#undef REAL_FIELD
#undef SIZE_FIELD
#undef U64_FIELD
#undef BOOL_FIELD
#undef PATH_FIELD

} // namespace

void RunConfig::validate() const
{
    auto checked = [](auto&& fn) {
        try
        {
            fn();
        }
        catch (const ConfigError&)
        {
            throw;
        }
        catch (const Error& e)
        {
            throw ConfigError(e.what());
        }
    };
    checked([&] { training.validate(); });
    checked([&] { reward.validate(); });
    if (steps < 1)
        throw ConfigError("steps must be >= 1");
    if (train_tasks < 1 && !train_corpus)
        throw ConfigError("tasks.train_count must be >= 1");
    if (caps.max_steps < 1 || eval.max_steps < 1)
        throw ConfigError("max_steps must be >= 1");
    if (caps.max_len < 1 || eval.max_len < 1)
        throw ConfigError("max_len must be >= 1");
    if (!(caps.temperature > 0.0) || !(eval.temperature > 0.0))
        throw ConfigError("temperatures must be positive");
    if (eval.k < 1)
        throw ConfigError("eval.k must be >= 1");
    if (inject_flaw_rate < 0.0 || inject_flaw_rate > 1.0)
        throw ConfigError("refine.inject_flaw_rate must lie in [0, 1]");
    if (feature_dim < 1)
        throw ConfigError("policy.feature_dim must be >= 1");
    if (init_scale < 0.0)
        throw ConfigError("policy.init_scale must be >= 0");
    if (judge_retries < 0 || judge_max_inflight < 1 || judge_timeout.count() <= 0)
        throw ConfigError("judge retries, max_inflight and timeout must be positive");
    if (judge_backend == "external" && judge_endpoint.empty())
        throw ConfigError("judge.backend = external needs judge.endpoint");
    if (threads < 1)
        throw ConfigError("threads must be >= 1");
    for (auto f: kAllFlaws)
        if (penalties.penalty(f) < 0.0)
            throw ConfigError(fmt::format("penalty for {} must be >= 0", to_string(f)));
}

void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value)
{
    key = trim(key);
    value = trim(value);
    for (auto const& f: fields())
        if (f.key == key)
        {
            f.set(cfg, value);
            return;
        }
    throw ConfigError(fmt::format("unknown config key '{}'", key));
}

auto parse_config(std::string_view text) -> RunConfig
{
    auto cfg = RunConfig {};
    auto sawVersion = false;
    auto lineNo = 0;
    auto in = std::istringstream(std::string(text));
    for (std::string raw; std::getline(in, raw);)
    {
        ++lineNo;
        auto const line = trim(raw);
        if (line.empty() || line.front() == '#')
            continue;
        auto const eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError(fmt::format("line {}: expected key = value", lineNo));
        auto const key = trim(line.substr(0, eq));
        auto const value = trim(line.substr(eq + 1));
        if (key == "schema_version")
        {
            if (parse_integer<int>(key, value) != kConfigSchemaVersion)
                throw ConfigError(fmt::format("unsupported schema_version {}", value));
            sawVersion = true;
            continue;
        }
        if (!sawVersion)
            throw ConfigError("schema_version must come before any other key");
        set_config_value(cfg, key, value);
    }
    if (!sawVersion)
        throw ConfigError("missing schema_version");
    return cfg;
}

auto load_config(const std::filesystem::path& path) -> RunConfig
{
    auto in = std::ifstream(path);
    if (!in)
        throw ConfigError("cannot read config " + path.string());
    auto buf = std::stringstream {};
    buf << in.rdbuf();
    return parse_config(buf.str());
}

auto serialize_config(const RunConfig& cfg) -> std::string
{
    auto out = fmt::format("schema_version = {}\n", kConfigSchemaVersion);
    for (auto const& f: fields())
        out += fmt::format("{} = {}\n", f.key, f.get(cfg));
    return out;
}

void save_config(const std::filesystem::path& path, const RunConfig& cfg)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    auto out = std::ofstream(path, std::ios::trunc);
    out << serialize_config(cfg);
    if (!out)
        throw Error("cannot write " + path.string());
}

void apply_env_overrides(RunConfig& cfg)
{
    if (auto const* dir = std::getenv("REAGENT_OUTPUT_DIR"); dir != nullptr && *dir != '\0')
        cfg.output_dir = dir;
    if (auto const* endpoint = std::getenv("REAGENT_JUDGE_ENDPOINT"); endpoint != nullptr && *endpoint != '\0')
        cfg.judge_endpoint = endpoint;
}

} // namespace reagent
