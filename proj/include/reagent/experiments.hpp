// SPDX-License-Identifier: Apache-2.0
#pragma once

// Run drivers behind the CLI. A training run directory holds
//
//   config.txt      the resolved RunConfig
//   metrics.jsonl   one record per optimizer step
//   paired.jsonl    first/second attempt outcomes (C and U)
//   state/          resumable trainer state, refreshed every checkpoint_every steps
//   policy.ckpt     final parameters
//   eval.json       evaluation table of the final parameters

#include <reagent/config.hpp>
#include <reagent/variants.hpp>

#include <nlohmann/json.hpp>

#include <filesystem>
#include <memory>
#include <span>
#include <vector>

namespace reagent
{

struct TaskSets
{
    std::vector<Task> train;
    std::vector<Task> eval;
};

/// Loads corpora when configured, otherwise generates them from tasks.seed.
auto build_task_sets(const RunConfig& cfg) -> TaskSets;

auto make_judge_backend(const RunConfig& cfg) -> std::unique_ptr<JudgeBackend>;

auto initial_params(const RunConfig& cfg) -> PolicyParams;

auto training_config(const RunConfig& cfg) -> TrainingConfig;
auto eval_config(const RunConfig& cfg) -> EvalConfig;

auto eval_to_json(const EvalTable& table) -> nlohmann::json;

struct TrainingSummary
{
    std::vector<MetricsRecord> metrics; // records written by this invocation
    PolicyParams final_params;
    EvalTable eval;
    std::size_t judge_failures = 0;
    std::uint64_t resumed_from = 0;
};

/// Trains cfg.variant (r, u or baseline) into cfg.output_dir. With `resume`, an
/// existing state/ directory is picked up and the metrics stream continued.
auto run_training(const RunConfig& cfg, bool resume = false) -> TrainingSummary;

/// Reagent-C over the eval set with the policy from policy.init_checkpoint
/// (or the random initial policy).
auto run_refinement(const RunConfig& cfg) -> VariantRunReport;

struct SweepRow
{
    double lambda = 0.0;
    std::uint64_t seed = 0;
    double pass_at_1 = 0.0;
    double pass_at_k = 0.0;
    double final_reward = 0.0;
};

/// Trains Reagent-R for every (lambda, seed) pair, each in its own subdirectory.
auto run_lambda_sweep(const RunConfig& cfg, std::span<const double> lambdas, std::span<const std::uint64_t> seeds)
    -> std::vector<SweepRow>;

auto format_sweep_table(std::span<const SweepRow> rows) -> std::string;

/// Summary of a run directory (metrics trend and evaluation table).
auto report_run(const std::filesystem::path& dir) -> std::string;

} // namespace reagent
