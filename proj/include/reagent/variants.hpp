// SPDX-License-Identifier: Apache-2.0
#pragma once

// The three feedback-integration loops and single-pass evaluation.
//
//   C         frozen policy; sample, judge, resample conditioned on the critique
//   R         GRPO with reward rule + lambda * judge score
//   U         two-stage sampling per task, advantages normalized over the 2G pool
//   Baseline  R with lambda = 0 and no judge calls

#include <reagent/environment.hpp>
#include <reagent/grpo.hpp>
#include <reagent/judge.hpp>
#include <reagent/metrics.hpp>
#include <reagent/policy.hpp>
#include <reagent/reward.hpp>

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace reagent
{

enum class Variant : std::uint8_t
{
    C,
    R,
    U,
    Baseline,
};

auto to_string(Variant v) -> std::string_view;
auto parse_variant(std::string_view text) -> std::optional<Variant>;

struct FamilyStats
{
    TaskFamily family = TaskFamily::Arithmetic;
    std::size_t tasks = 0;
    double pass_at_1 = 0.0;
    double pass_at_k = 0.0;
};

struct EvalTable
{
    std::size_t k = 1;
    std::vector<FamilyStats> families; // only families present in the task set
    double pass_at_1 = 0.0;            // over all tasks
    double pass_at_k = 0.0;
};

struct EvalConfig
{
    double temperature = kEvalTemperature;
    std::size_t max_steps = kEvalMaxSteps;
    std::size_t max_len = 48;
    std::size_t k = 3;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
};

/// Produces the trajectory of attempt `sample` on task `index`.
using Agent = std::function<Trajectory(const Task& task, std::size_t index, std::size_t sample)>;

auto evaluate(const Agent& agent, std::span<const Task> tasks, std::size_t k, std::size_t threads = 1) -> EvalTable;

/// Single-pass sampling from `params` (no critique), k independent attempts per task.
auto evaluate(const PolicyParams& params, std::span<const Task> tasks, const EvalConfig& cfg) -> EvalTable;

/// The scripted oracle agent.
auto evaluate_oracle_agent(std::span<const Task> tasks, std::size_t max_steps = kEvalMaxSteps) -> EvalTable;

struct PairedOutcome
{
    std::string task_id;
    std::uint64_t step = 0;
    bool first_correct = false;
    bool second_correct = false;
    std::vector<FlawCode> first_flaws;
};

auto serialize_paired(const PairedOutcome& p) -> std::string;

struct VariantRunReport
{
    Variant variant = Variant::R;
    std::vector<MetricsRecord> metrics;
    std::optional<PolicyParams> final_params; // R, U, Baseline
    std::vector<PairedOutcome> paired;        // C, U
    std::optional<EvalTable> eval;
    std::uint64_t checksum_before = 0;
    std::uint64_t checksum_after = 0;
    std::size_t judge_failures = 0;
    std::size_t skipped_tasks = 0; // C: tasks whose judgment failed
    double first_pass_rate = 0.0;  // C
    double second_pass_rate = 0.0; // C
};

struct TrainOptions
{
    std::size_t steps = 100;
    EpisodeCaps caps {};
    bool stage2_enabled = true; // U only
    std::size_t critique_chars = 240;
    std::size_t threads = 1;
    bool record_paired = true;
    std::function<void(const MetricsRecord&)> on_metrics;
    std::function<void(const PairedOutcome&)> on_paired;
};

/// Complete optimizer state between batches.
struct TrainerState
{
    PolicyParams params;
    PolicyParams reference;
    std::optional<AdamAscent> adam;
    std::uint64_t next_step = 0;
};

void save_trainer_state(const std::filesystem::path& dir, const TrainerState& state);
auto load_trainer_state(const std::filesystem::path& dir) -> TrainerState;

/// Batch-by-batch GRPO driver shared by R, U and Baseline.
class Trainer
{
  public:
    Trainer(Variant variant, TrainerState state, std::vector<Task> tasks, JudgeBackend* backend,
            TrainingConfig cfg, RewardConfig rcfg, TrainOptions options);

    /// Samples, scores and optimizes one batch; returns its metrics record.
    auto step() -> MetricsRecord;

    [[nodiscard]] auto state() const noexcept -> const TrainerState& { return _state; }
    [[nodiscard]] auto paired() const noexcept -> const std::vector<PairedOutcome>& { return _paired; }
    [[nodiscard]] auto judge_failures() const noexcept -> std::size_t { return _judgeFailures; }

    /// Scored groups for one batch under the current sampling policy (exposed for tests).
    auto sample_batch(std::uint64_t step) -> std::vector<ScoredGroup>;

  private:
    struct TaskOutcome
    {
        ScoredGroup group;
        std::vector<PairedOutcome> paired;
        std::size_t judge_failures = 0;
    };

    auto batch_indices(std::uint64_t step) const -> std::vector<std::size_t>;
    auto score_task(const Task& task, const PolicyParams& sampler, const PolicyParams& reference, std::uint64_t step,
                    std::size_t slot) const -> TaskOutcome;
    auto uses_judge() const -> bool;

    Variant _variant;
    TrainerState _state;
    std::vector<Task> _tasks;
    JudgeBackend* _backend;
    TrainingConfig _cfg;
    RewardConfig _rcfg;
    TrainOptions _options;
    std::vector<PairedOutcome> _paired;
    std::size_t _judgeFailures = 0;
    std::size_t _lastBatchFailures = 0;
};

auto initial_state(const PolicyParams& params, const TrainingConfig& cfg) -> TrainerState;

auto run_reagent_r(const PolicyParams& params, std::span<const Task> tasks, JudgeBackend& backend,
                   const TrainingConfig& cfg, const RewardConfig& rcfg, const TrainOptions& options = {})
    -> VariantRunReport;

auto run_baseline(const PolicyParams& params, std::span<const Task> tasks, const TrainingConfig& cfg,
                  const TrainOptions& options = {}) -> VariantRunReport;

auto run_reagent_u(const PolicyParams& params, std::span<const Task> tasks, JudgeBackend& backend,
                   const TrainingConfig& cfg, const RewardConfig& rcfg, const TrainOptions& options = {})
    -> VariantRunReport;

struct RefineOptions
{
    EpisodeCaps caps {};
    std::size_t critique_chars = 240;
    std::uint64_t seed = 0;
    /// Probability of cutting a first attempt short before judging it.
    double inject_flaw_rate = 0.0;
    std::size_t threads = 1;
};

/// Cuts `traj` at a random point before its end; tool calls and answer past the cut are dropped.
auto truncate_trajectory(const Trajectory& traj, Rng& rng) -> Trajectory;

auto run_reagent_c(const FrozenPolicy& frozen, std::span<const Task> tasks, JudgeBackend& backend,
                   const RefineOptions& options = {}) -> VariantRunReport;

} // namespace reagent
