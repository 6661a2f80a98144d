// SPDX-License-Identifier: Apache-2.0
#pragma once

// Run configuration as a plain-text document:
//
//   # comment
//   schema_version = 1
//   variant = r
//   reward.lambda = 0.3
//
// Every key has a default; unknown keys and malformed values raise ConfigError.

#include <reagent/environment.hpp>
#include <reagent/external_judge.hpp>
#include <reagent/grpo.hpp>
#include <reagent/judge.hpp>
#include <reagent/reward.hpp>
#include <reagent/variants.hpp>

#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace reagent
{

inline constexpr int kConfigSchemaVersion = 1;

struct RunConfig
{
    Variant variant = Variant::R;
    std::uint64_t seed = 0;
    std::size_t steps = 300;

    std::vector<TaskFamily> train_families { TaskFamily::Arithmetic, TaskFamily::Lookup };
    std::vector<TaskFamily> eval_families { TaskFamily::Arithmetic, TaskFamily::Lookup };
    std::size_t train_tasks = 200;
    std::size_t eval_tasks_per_family = 50;
    std::uint64_t task_seed = 1;
    std::optional<std::filesystem::path> train_corpus;
    std::optional<std::filesystem::path> eval_corpus;

    TrainingConfig training {};
    RewardConfig reward {};
    EpisodeCaps caps {};
    EvalConfig eval {};
    PenaltyTable penalties {};

    bool stage2 = true;
    std::size_t critique_chars = 240;
    double inject_flaw_rate = 0.5;

    std::size_t feature_dim = kDefaultFeatureDim;
    double init_scale = 0.01;
    std::optional<std::filesystem::path> init_checkpoint;

    std::string judge_backend = "oracle"; // oracle | external
    std::string judge_endpoint;
    std::chrono::milliseconds judge_timeout { 30'000 };
    int judge_retries = 2;
    std::size_t judge_max_inflight = 4;
    std::string judge_template = std::string(kDefaultTemplateId);
    std::optional<std::filesystem::path> judge_cache;

    std::filesystem::path output_dir = "runs/default";
    std::size_t threads = 1;
    std::size_t checkpoint_every = 50;

    void validate() const;
};

/// Assigns one key. Throws ConfigError for unknown keys or unparsable values.
void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value);

auto parse_config(std::string_view text) -> RunConfig;
auto load_config(const std::filesystem::path& path) -> RunConfig;

/// Every key in a fixed order; parse_config(serialize_config(c)) reproduces c.
auto serialize_config(const RunConfig& cfg) -> std::string;
void save_config(const std::filesystem::path& path, const RunConfig& cfg);

/// REAGENT_OUTPUT_DIR and REAGENT_JUDGE_ENDPOINT take precedence over the document.
void apply_env_overrides(RunConfig& cfg);

} // namespace reagent
