// SPDX-License-Identifier: Apache-2.0
#include <reagent/experiments.hpp>
#include <reagent/external_judge.hpp>
#include <reagent/random.hpp>
#include <reagent/records.hpp>

#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <map>

namespace reagent
{

namespace fs = std::filesystem;

namespace
{

constexpr std::uint64_t kInitStream = 0x1417;

auto split_generate(std::uint64_t base, const std::vector<TaskFamily>& families, std::size_t total)
    -> std::vector<Task>
{
    auto out = std::vector<Task> {};
    auto const n = families.size();
    for (std::size_t i = 0; i < n; ++i)
    {
        auto const count = total / n + (i < total % n ? 1 : 0);
        auto part = generate_tasks(base, families[i], count);
        out.insert(out.end(), part.begin(), part.end());
    }
    return out;
}

void write_json(const fs::path& path, const nlohmann::json& doc)
{
    write_lines(path, { doc.dump(2) });
}

void truncate_paired(const fs::path& path, std::uint64_t step)
{
    if (!fs::exists(path))
        return;
    auto kept = std::vector<std::string> {};
    for (auto const& line: read_lines(path))
    {
        auto const doc = nlohmann::json::parse(line, nullptr, false);
        if (doc.is_discarded())
            break; // torn tail
        if (doc.value("step", std::uint64_t { 0 }) < step)
            kept.push_back(line);
    }
    write_lines(path, kept);
}

auto lambda_dir_name(double lambda, std::uint64_t seed) -> std::string
{
    return fmt::format("lambda_{}_seed_{}", lambda, seed);
}

} // namespace

auto build_task_sets(const RunConfig& cfg) -> TaskSets
{
    auto sets = TaskSets {};
    sets.train = cfg.train_corpus ? load_tasks(*cfg.train_corpus)
                                  : split_generate(cfg.task_seed * 2, cfg.train_families, cfg.train_tasks);
    if (cfg.eval_corpus)
        sets.eval = load_tasks(*cfg.eval_corpus);
    else
        sets.eval = split_generate(cfg.task_seed * 2 + 1, cfg.eval_families,
                                   cfg.eval_tasks_per_family * cfg.eval_families.size());
    return sets;
}

auto make_judge_backend(const RunConfig& cfg) -> std::unique_ptr<JudgeBackend>
{
    if (cfg.judge_backend == "oracle")
        return std::make_unique<OracleJudge>(cfg.penalties);
    auto config = ExternalJudgeConfig { .timeout = cfg.judge_timeout,
                                        .retries = cfg.judge_retries,
                                        .max_inflight = cfg.judge_max_inflight,
                                        .template_id = cfg.judge_template,
                                        .cache_path = cfg.judge_cache };
    return std::make_unique<ExternalJudge>(std::make_shared<HttpJudgeTransport>(cfg.judge_endpoint), config);
}

auto initial_params(const RunConfig& cfg) -> PolicyParams
{
    return PolicyParams::random(cfg.feature_dim, kVocabSize, cfg.init_scale, mix_seed(cfg.seed, kInitStream));
}

auto training_config(const RunConfig& cfg) -> TrainingConfig
{
    auto out = cfg.training;
    out.seed = cfg.seed;
    return out;
}

auto eval_config(const RunConfig& cfg) -> EvalConfig
{
    auto out = cfg.eval;
    out.seed = cfg.seed;
    out.threads = cfg.threads;
    return out;
}

auto eval_to_json(const EvalTable& table) -> nlohmann::json
{
    auto families = nlohmann::json::array();
    for (auto const& f: table.families)
        families.push_back({ { "family", to_string(f.family) },
                             { "tasks", f.tasks },
                             { "pass_at_1", f.pass_at_1 },
                             { "pass_at_k", f.pass_at_k } });
    return { { "schema", "reagent.eval" }, { "version", kRecordVersion }, { "k", table.k },
             { "pass_at_1", table.pass_at_1 }, { "pass_at_k", table.pass_at_k }, { "families", families } };
}

auto run_training(const RunConfig& cfg, bool resume) -> TrainingSummary
{
    cfg.validate();
    if (cfg.variant == Variant::C)
        throw ConfigError("variant c is run with the refine command");

    auto const sets = build_task_sets(cfg);
    auto const tcfg = training_config(cfg);
    auto backend = cfg.variant == Variant::Baseline ? nullptr : make_judge_backend(cfg);

    auto const dir = cfg.output_dir;
    fs::create_directories(dir);
    save_config(dir / "config.txt", cfg);
    auto const metricsPath = dir / "metrics.jsonl";
    auto const pairedPath = dir / "paired.jsonl";
    auto const stateDir = dir / "state";

    auto resumed = resume && fs::exists(stateDir / "state.json");
    auto state = resumed ? load_trainer_state(stateDir) : initial_state(initial_params(cfg), tcfg);
    if (resumed)
    {
        truncate_metrics(metricsPath, state.next_step);
        truncate_paired(pairedPath, state.next_step);
    }

    auto summary = TrainingSummary { .metrics = {},
                                     .final_params = state.params,
                                     .eval = {},
                                     .judge_failures = 0,
                                     .resumed_from = state.next_step };

    auto writer = MetricsWriter(metricsPath, !resumed);
    auto paired = std::ofstream(pairedPath, resumed ? std::ios::app : std::ios::trunc);
    auto options = TrainOptions {};
    options.steps = cfg.steps;
    options.caps = cfg.caps;
    options.stage2_enabled = cfg.stage2;
    options.critique_chars = cfg.critique_chars;
    options.threads = cfg.threads;
    options.record_paired = cfg.variant == Variant::U;
    options.on_metrics = [&](const MetricsRecord& r) { writer.write(r); };
    options.on_paired = [&](const PairedOutcome& p) { paired << serialize_paired(p) << '\n'; };

    auto trainer = Trainer(cfg.variant, std::move(state), sets.train, backend.get(), tcfg, cfg.reward, options);
    while (trainer.state().next_step < cfg.steps)
    {
        summary.metrics.push_back(trainer.step());
        paired.flush();
        auto const done = trainer.state().next_step;
        if (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.steps)
            save_trainer_state(stateDir, trainer.state());
    }
    save_trainer_state(stateDir, trainer.state());
    save_checkpoint(dir / "policy.ckpt", trainer.state().params);

    summary.final_params = trainer.state().params;
    summary.judge_failures = trainer.judge_failures();
    summary.eval = evaluate(summary.final_params, sets.eval, eval_config(cfg));
    write_json(dir / "eval.json", eval_to_json(summary.eval));
    return summary;
}

auto run_refinement(const RunConfig& cfg) -> VariantRunReport
{
    cfg.validate();
    auto const sets = build_task_sets(cfg);
    auto backend = make_judge_backend(cfg);
    auto const frozen = FrozenPolicy(cfg.init_checkpoint ? load_checkpoint(*cfg.init_checkpoint) : initial_params(cfg));

    auto const dir = cfg.output_dir;
    fs::create_directories(dir);
    save_config(dir / "config.txt", cfg);

    auto const options = RefineOptions { .caps = cfg.caps,
                                         .critique_chars = cfg.critique_chars,
                                         .seed = cfg.seed,
                                         .inject_flaw_rate = cfg.inject_flaw_rate,
                                         .threads = cfg.threads };
    auto report = run_reagent_c(frozen, sets.eval, *backend, options);

    auto lines = std::vector<std::string> {};
    for (auto const& p: report.paired)
        lines.push_back(serialize_paired(p));
    write_lines(dir / "paired.jsonl", lines);
    save_checkpoint(dir / "policy.ckpt", frozen.params());
    write_json(dir / "refine.json", { { "schema", "reagent.refine" },
                                      { "version", kRecordVersion },
                                      { "tasks", sets.eval.size() },
                                      { "judged", report.paired.size() },
                                      { "skipped", report.skipped_tasks },
                                      { "first_pass_at_1", report.first_pass_rate },
                                      { "second_pass_at_1", report.second_pass_rate },
                                      { "checksum_before", hex64(report.checksum_before) },
                                      { "checksum_after", hex64(report.checksum_after) } });
    return report;
}

auto run_lambda_sweep(const RunConfig& cfg, std::span<const double> lambdas, std::span<const std::uint64_t> seeds)
    -> std::vector<SweepRow>
{
    for (auto l: lambdas)
        if (!(l >= 0.0) || !std::isfinite(l))
            throw ConfigError(fmt::format("lambda must be finite and >= 0, got {}", l));
    cfg.validate();

    auto rows = std::vector<SweepRow> {};
    for (auto seed: seeds)
        for (auto lambda: lambdas)
        {
            auto run = cfg;
            run.variant = Variant::R;
            run.seed = seed;
            run.reward.lambda = lambda;
            run.output_dir = cfg.output_dir / lambda_dir_name(lambda, seed);
            auto const summary = run_training(run);
            auto row = SweepRow { .lambda = lambda,
                                  .seed = seed,
                                  .pass_at_1 = summary.eval.pass_at_1,
                                  .pass_at_k = summary.eval.pass_at_k,
                                  .final_reward = 0.0 };
            if (!summary.metrics.empty())
                row.final_reward = summary.metrics.back().mean_reward;
            rows.push_back(row);
        }

    auto lines = std::vector<std::string> {};
    for (auto const& r: rows)
        lines.push_back(nlohmann::json { { "schema", "reagent.sweep" },
                                         { "version", kRecordVersion },
                                         { "lambda", r.lambda },
                                         { "seed", r.seed },
                                         { "pass_at_1", r.pass_at_1 },
                                         { "pass_at_k", r.pass_at_k },
                                         { "final_reward", r.final_reward } }
                            .dump());
    fs::create_directories(cfg.output_dir);
    write_lines(cfg.output_dir / "sweep.jsonl", lines);
    write_lines(cfg.output_dir / "sweep.txt", { format_sweep_table(rows) });
    return rows;
}

auto format_sweep_table(std::span<const SweepRow> rows) -> std::string
{
    auto lambdas = std::vector<double> {};
    auto bySeed = std::map<std::uint64_t, std::map<double, double>> {};
    for (auto const& r: rows)
    {
        if (std::ranges::find(lambdas, r.lambda) == lambdas.end())
            lambdas.push_back(r.lambda);
        bySeed[r.seed][r.lambda] = r.pass_at_1;
    }

    auto out = fmt::format("{:<8}", "seed");
    for (auto l: lambdas)
        out += fmt::format(" {:>8}", fmt::format("l={}", l));
    out += "  argmax\n";
    auto means = std::vector<double>(lambdas.size(), 0.0);
    for (auto const& [seed, cells]: bySeed)
    {
        out += fmt::format("{:<8}", seed);
        auto best = lambdas.empty() ? 0.0 : lambdas.front();
        auto bestValue = -1.0;
        for (std::size_t i = 0; i < lambdas.size(); ++i)
        {
            auto const it = cells.find(lambdas[i]);
            if (it == cells.end())
            {
                out += fmt::format(" {:>8}", "-");
                continue;
            }
            out += fmt::format(" {:>8.3f}", it->second);
            means[i] += it->second / static_cast<double>(bySeed.size());
            if (it->second > bestValue)
            {
                bestValue = it->second;
                best = lambdas[i];
            }
        }
        out += fmt::format("  {}\n", best);
    }
    out += fmt::format("{:<8}", "mean");
    for (auto m: means)
        out += fmt::format(" {:>8.3f}", m);
    out += "\n";
    return out;
}

auto report_run(const fs::path& dir) -> std::string
{
    auto out = fmt::format("run: {}\n", dir.string());
    if (fs::exists(dir / "metrics.jsonl"))
    {
        auto const read = read_metrics(dir / "metrics.jsonl");
        out += fmt::format("steps: {}{}\n", read.records.size(), read.torn_tail ? " (torn final line skipped)" : "");
        if (!read.records.empty())
        {
            auto const window = std::min<std::size_t>(10, read.records.size());
            auto avg = [&](auto first, auto member) {
                auto sum = 0.0;
                for (auto it = first; it != first + static_cast<std::ptrdiff_t>(window); ++it)
                    sum += static_cast<double>((*it).*member);
                return sum / static_cast<double>(window);
            };
            out += fmt::format("{:<14} {:>10} {:>10}\n", "metric", "first", "last");
            auto row = [&](std::string_view name, auto member) {
                out += fmt::format("{:<14} {:>10.4f} {:>10.4f}\n", name, avg(read.records.begin(), member),
                                   avg(read.records.end() - static_cast<std::ptrdiff_t>(window), member));
            };
            row("reward", &MetricsRecord::mean_reward);
            row("rule", &MetricsRecord::mean_rule);
            row("model", &MetricsRecord::mean_model);
            row("J", &MetricsRecord::objective);
            row("KL", &MetricsRecord::mean_kl);
            row("clip_frac", &MetricsRecord::clip_fraction);
            auto failures = std::uint64_t { 0 };
            for (auto const& r: read.records)
                failures += r.judge_failures;
            out += fmt::format("judge failures: {}\n", failures);
        }
    }
    if (fs::exists(dir / "eval.json"))
    {
        auto const lines = read_lines(dir / "eval.json");
        auto text = std::string {};
        for (auto const& l: lines)
            text += l;
        auto const doc = nlohmann::json::parse(text, nullptr, false);
        if (!doc.is_discarded())
        {
            auto const k = doc.value("k", 1);
            out += fmt::format("{:<14} {:>6} {:>8} {:>8}\n", "family", "tasks", "pass@1", fmt::format("pass@{}", k));
            for (auto const& f: doc.at("families"))
                out += fmt::format("{:<14} {:>6} {:>8.3f} {:>8.3f}\n", f.at("family").get<std::string>(),
                                   f.at("tasks").get<std::size_t>(), f.at("pass_at_1").get<double>(),
                                   f.at("pass_at_k").get<double>());
            out += fmt::format("{:<14} {:>6} {:>8.3f} {:>8.3f}\n", "all", "", doc.value("pass_at_1", 0.0),
                               doc.value("pass_at_k", 0.0));
        }
    }
    if (fs::exists(dir / "sweep.txt"))
        for (auto const& l: read_lines(dir / "sweep.txt"))
            out += l + "\n";
    if (fs::exists(dir / "refine.json"))
        for (auto const& l: read_lines(dir / "refine.json"))
            out += l + "\n";
    return out;
}

} // namespace reagent
