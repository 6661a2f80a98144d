// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <reagent/errors.hpp>
#include <reagent/variants.hpp>

#include <doctest.h>

using namespace reagent;
using namespace reagent::testing;

namespace
{

class FailingJudge final: public JudgeBackend
{
  public:
    auto evaluate(const Task&, const Trajectory&) -> std::string override
    {
        ++calls;
        return "<think>x</think><critique>y</critique>";
    }
    std::size_t calls = 0;
};

auto small_tasks(std::size_t per_family = 6) -> std::vector<Task>
{
    auto tasks = generate_tasks(11, TaskFamily::Arithmetic, per_family);
    auto lookup = generate_tasks(12, TaskFamily::Lookup, per_family);
    tasks.insert(tasks.end(), lookup.begin(), lookup.end());
    return tasks;
}

auto small_config(std::uint64_t seed = 0) -> TrainingConfig
{
    auto cfg = TrainingConfig {};
    cfg.group_size = 4;
    cfg.batch_tasks = 4;
    cfg.minibatch_tasks = 2;
    cfg.seed = seed;
    return cfg;
}

auto start_params(std::uint64_t seed = 5) -> PolicyParams
{
    auto rng = Rng(seed);
    return random_params(rng, 64, kVocabSize, 0.1);
}

auto metrics_text(const std::vector<MetricsRecord>& records) -> std::string
{
    auto out = std::string {};
    for (auto const& r: records)
        out += serialize_metrics(r) + "\n";
    return out;
}

auto options(std::size_t steps, std::size_t threads = 1) -> TrainOptions
{
    auto o = TrainOptions {};
    o.steps = steps;
    o.threads = threads;
    return o;
}

} // namespace

TEST_CASE("variant names")
{
    for (auto v: { Variant::C, Variant::R, Variant::U, Variant::Baseline })
        CHECK(parse_variant(to_string(v)) == v);
    CHECK(!parse_variant("x").has_value());
}

TEST_CASE("U pools both stages into one group of 2G")
{
    auto oracle = OracleJudge {};
    auto const tasks = small_tasks();
    auto const cfg = small_config();
    auto trainer = Trainer(Variant::U, initial_state(start_params(), cfg), tasks, &oracle, cfg,
                           RewardConfig { .lambda = 0.3 }, options(1));
    auto const groups = trainer.sample_batch(0);
    REQUIRE(groups.size() == cfg.batch_tasks);
    for (auto const& g: groups)
    {
        REQUIRE(g.entries.size() == 2 * cfg.group_size);
        CHECK_NOTHROW(validate_group(g));
        auto rewards = std::vector<double> {};
        for (std::size_t i = 0; i < g.entries.size(); ++i)
        {
            auto const& e = g.entries[i];
            CHECK(e.trajectory.stage == (i < cfg.group_size ? Stage::First : Stage::Refined));
            CHECK(e.context.critique().has_value() == (i >= cfg.group_size));
            rewards.push_back(e.reward.combined);
        }
        auto const adv = normalize_advantages(rewards);
        for (std::size_t i = 0; i < adv.size(); ++i)
            CHECK(g.entries[i].advantage == adv[i]);
    }
    CHECK(trainer.paired().size() == cfg.batch_tasks * cfg.group_size);
}

TEST_CASE("U without the second stage reduces to GRPO")
{
    auto oracle = OracleJudge {};
    auto const tasks = small_tasks();
    auto const cfg = small_config(3);
    auto const rcfg = RewardConfig { .lambda = 0.3 };
    auto noStage2 = options(4);
    noStage2.stage2_enabled = false;

    auto u = Trainer(Variant::U, initial_state(start_params(), cfg), tasks, &oracle, cfg, rcfg, noStage2);
    auto r = Trainer(Variant::R, initial_state(start_params(), cfg), tasks, &oracle, cfg, rcfg, options(4));

    auto const gu = u.sample_batch(0);
    auto const gr = r.sample_batch(0);
    REQUIRE(gu.size() == gr.size());
    for (std::size_t i = 0; i < gu.size(); ++i)
        CHECK(gu[i].entries.size() == cfg.group_size);
    auto const ju = objective_and_gradient(u.state().params, gu, cfg);
    auto const jr = objective_and_gradient(r.state().params, gr, cfg);
    CHECK(std::abs(ju.objective - jr.objective) <= 1e-12);
    CHECK(relative_error(ju.gradient, jr.gradient) <= 1e-12);

    auto const ru = run_reagent_u(start_params(), tasks, oracle, cfg, rcfg, noStage2);
    auto const rr = run_reagent_r(start_params(), tasks, oracle, cfg, rcfg, options(4));
    REQUIRE(ru.metrics.size() == rr.metrics.size());
    for (std::size_t i = 0; i < ru.metrics.size(); ++i)
        CHECK(std::abs(ru.metrics[i].objective - rr.metrics[i].objective) <= 1e-12);
    CHECK(*ru.final_params == *rr.final_params);
    CHECK(ru.paired.empty());
}

TEST_CASE("baseline equals R with lambda zero")
{
    auto oracle = OracleJudge {};
    auto const tasks = small_tasks();
    auto const cfg = small_config(1);
    auto const base = run_baseline(start_params(), tasks, cfg, options(5));
    auto const r0 = run_reagent_r(start_params(), tasks, oracle, cfg, RewardConfig { .lambda = 0.0 }, options(5));
    CHECK(metrics_text(base.metrics) == metrics_text(r0.metrics));
    CHECK(*base.final_params == *r0.final_params);
    for (auto const& m: base.metrics)
        CHECK(m.mean_model == 0.0);
}

TEST_CASE("training is deterministic and thread-count independent")
{
    auto oracle = OracleJudge {};
    auto const tasks = small_tasks();
    auto const cfg = small_config(9);
    auto const rcfg = RewardConfig { .lambda = 0.3 };
    auto const a = run_reagent_r(start_params(), tasks, oracle, cfg, rcfg, options(4, 1));
    auto const b = run_reagent_r(start_params(), tasks, oracle, cfg, rcfg, options(4, 1));
    auto const c = run_reagent_r(start_params(), tasks, oracle, cfg, rcfg, options(4, 3));
    CHECK(metrics_text(a.metrics) == metrics_text(b.metrics));
    CHECK(metrics_text(a.metrics) == metrics_text(c.metrics));
    CHECK(*a.final_params == *c.final_params);
    CHECK(a.metrics.size() == 4);

    auto const other = run_reagent_r(start_params(), tasks, oracle, small_config(10), rcfg, options(4, 1));
    CHECK(metrics_text(a.metrics) != metrics_text(other.metrics));
}

TEST_CASE("training with a positive lambda uses the judge score")
{
    auto oracle = OracleJudge {};
    auto const tasks = small_tasks();
    auto const report = run_reagent_r(start_params(), tasks, oracle, small_config(), RewardConfig { .lambda = 0.5 },
                                      options(2));
    for (auto const& m: report.metrics)
    {
        CHECK(m.mean_model > 0.0);
        CHECK(std::abs(m.mean_reward - (m.mean_rule + 0.5 * m.mean_model)) < 1e-12);
        CHECK(m.judge_failures == 0);
    }
}

TEST_CASE("judge failures are counted and give no model reward")
{
    auto failing = FailingJudge {};
    auto const tasks = small_tasks();
    auto const cfg = small_config();
    auto const report = run_reagent_u(start_params(), tasks, failing, cfg, RewardConfig { .lambda = 0.3 }, options(2));
    REQUIRE(report.metrics.size() == 2);
    for (auto const& m: report.metrics)
    {
        CHECK(m.mean_model == 0.0);
        CHECK(m.judge_failures == cfg.batch_tasks * cfg.group_size * 2);
    }
    CHECK(report.judge_failures == 2 * cfg.batch_tasks * cfg.group_size * 2);
    CHECK(failing.calls == report.judge_failures);
}

TEST_CASE("resuming from saved trainer state matches an uninterrupted run")
{
    auto oracle = OracleJudge {};
    auto const tasks = small_tasks();
    auto const rcfg = RewardConfig { .lambda = 0.3 };
    for (auto optimizer: { OptimizerKind::Sgd, OptimizerKind::Adam })
    {
        CAPTURE(static_cast<int>(optimizer));
        auto cfg = small_config(4);
        cfg.optimizer = optimizer;
        cfg.reference = ReferencePolicy::Initial;

        auto straight = Trainer(Variant::U, initial_state(start_params(), cfg), tasks, &oracle, cfg, rcfg, options(4));
        auto expected = std::vector<MetricsRecord> {};
        for (auto i = 0; i < 4; ++i)
            expected.push_back(straight.step());

        auto const dir = TempDir("resume");
        auto actual = std::vector<MetricsRecord> {};
        {
            auto first = Trainer(Variant::U, initial_state(start_params(), cfg), tasks, &oracle, cfg, rcfg, options(4));
            actual.push_back(first.step());
            actual.push_back(first.step());
            save_trainer_state(dir.path(), first.state());
        }
        auto loaded = load_trainer_state(dir.path());
        CHECK(loaded.next_step == 2);
        CHECK(loaded.adam.has_value() == (optimizer == OptimizerKind::Adam));
        auto second = Trainer(Variant::U, std::move(loaded), tasks, &oracle, cfg, rcfg, options(4));
        actual.push_back(second.step());
        actual.push_back(second.step());

        CHECK(metrics_text(actual) == metrics_text(expected));
        CHECK(second.state().params == straight.state().params);
    }
    CHECK_THROWS(load_trainer_state(std::filesystem::path("/nonexistent/reagent-state")));
}

TEST_CASE("batch-start reference keeps the KL term at zero on the first minibatch")
{
    auto oracle = OracleJudge {};
    auto cfg = small_config();
    cfg.reference = ReferencePolicy::BatchStart;
    cfg.minibatch_tasks = cfg.batch_tasks;
    auto const report = run_reagent_r(start_params(), small_tasks(), oracle, cfg, RewardConfig { .lambda = 0.3 }, options(3));
    for (auto const& m: report.metrics)
        CHECK(m.mean_kl == 0.0);
}

TEST_CASE("truncated trajectories")
{
    auto rng = Rng(17);
    auto const params = random_params(rng, 32, kVocabSize, 1.0);
    for (std::uint64_t seed = 0; seed < 200; ++seed)
    {
        auto const task = generate_task(seed, kAllFamilies[seed % 4]);
        auto sampler = Rng(seed);
        auto const ep = run_episode(params, Context::for_task(task.prompt), task, Stage::First, EpisodeCaps {}, sampler);
        auto const cut = truncate_trajectory(ep.trajectory, rng);
        if (ep.trajectory.actions.empty())
        {
            CHECK(cut == ep.trajectory);
            continue;
        }
        CHECK(cut.actions.size() < ep.trajectory.actions.size());
        CHECK(std::equal(cut.actions.begin(), cut.actions.end(), ep.trajectory.actions.begin()));
        CHECK(cut.final_answer.empty());
        CHECK(cut.tool_calls.size() <= ep.trajectory.tool_calls.size());
        CHECK(cut.context_fingerprint == ep.trajectory.context_fingerprint);
        CHECK_NOTHROW(validate_trajectory(cut, kTrainMaxSteps));
    }
}

TEST_CASE("C leaves the frozen policy untouched")
{
    auto oracle = OracleJudge {};
    auto const tasks = small_tasks(10);
    auto const frozen = snapshot(start_params());
    auto opts = RefineOptions {};
    opts.seed = 2;
    opts.inject_flaw_rate = 0.5;
    auto const a = run_reagent_c(frozen, tasks, oracle, opts);
    CHECK(a.checksum_before == a.checksum_after);
    CHECK(a.checksum_before == frozen.params().checksum());
    CHECK(a.paired.size() == tasks.size());
    CHECK(a.skipped_tasks == 0);
    CHECK(a.first_pass_rate >= 0.0);
    CHECK(a.second_pass_rate <= 1.0);
    REQUIRE(a.eval.has_value());
    CHECK(a.eval->pass_at_1 == a.second_pass_rate);

    opts.threads = 3;
    auto const b = run_reagent_c(frozen, tasks, oracle, opts);
    CHECK(b.first_pass_rate == a.first_pass_rate);
    CHECK(b.second_pass_rate == a.second_pass_rate);

    auto failing = FailingJudge {};
    auto const skipped = run_reagent_c(frozen, tasks, failing, opts);
    CHECK(skipped.skipped_tasks == tasks.size());
    CHECK(skipped.paired.empty());
}

TEST_CASE("pass@1 and pass@k")
{
    auto const tasks = small_tasks(5);
    auto const oracle = evaluate_oracle_agent(tasks);
    CHECK(oracle.pass_at_1 == 1.0);
    CHECK(oracle.families.size() == 2);

    // Correct only on the second attempt.
    auto const late = [](const Task& task, std::size_t, std::size_t sample) {
        auto t = Trajectory {};
        t.final_answer = sample == 1 ? task.ground_truth : "wrong";
        return t;
    };
    auto const table = evaluate(late, tasks, 3);
    CHECK(table.pass_at_1 == 0.0);
    CHECK(table.pass_at_k == 1.0);
    CHECK(table.k == 3);
    CHECK_THROWS_AS(evaluate(late, tasks, 0), ValidationError);

    auto const params = start_params();
    auto const e1 = evaluate(params, tasks, EvalConfig { .k = 2, .seed = 4 });
    auto const e2 = evaluate(params, tasks, EvalConfig { .k = 2, .seed = 4, .threads = 2 });
    CHECK(e1.pass_at_1 == e2.pass_at_1);
    CHECK(e1.pass_at_k == e2.pass_at_k);
    CHECK(e1.pass_at_k >= e1.pass_at_1);
}
