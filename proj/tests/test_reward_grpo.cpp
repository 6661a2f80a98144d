// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <reagent/errors.hpp>
#include <reagent/reward.hpp>

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace reagent;
using namespace reagent::testing;

namespace
{

auto near(double a, double b, double tol = 1e-12) -> bool
{
    return std::abs(a - b) <= tol;
}

auto perturbed(const PolicyParams& p, Rng& rng, double scale) -> PolicyParams
{
    auto out = p;
    for (Eigen::Index i = 0; i < out.weights().size(); ++i)
        out.weights().data()[i] += scale * rng.normal();
    return out;
}

} // namespace

TEST_CASE("combined reward examples")
{
    auto const cfg = RewardConfig { .lambda = 0.3, .format_penalty_enabled = false };
    auto const good = combined_reward(1.0, 0.8, cfg);
    CHECK(near(good.combined, 1.24));
    CHECK(good.rule == 1.0);
    CHECK(good.model == 0.8);
    CHECK(good.lambda == 0.3);
    CHECK(near(combined_reward(0.0, 0.9, cfg).combined, 0.27));

    CHECK(RewardConfig {}.lambda == 0.3);
    CHECK_THROWS_AS(combined_reward(1.0, 0.5, RewardConfig { .lambda = -0.1 }), ConfigError);
    CHECK_THROWS_AS(combined_reward(0.5, 0.5, cfg), ValidationError);
    CHECK_THROWS_AS(combined_reward(1.0, 1.5, cfg), ValidationError);
}

TEST_CASE("combined reward properties")
{
    auto rng = Rng(7);
    for (auto i = 0; i < 2000; ++i)
    {
        auto const rule = rng.uniform() < 0.5 ? 0.0 : 1.0;
        auto const m1 = rng.uniform();
        auto const m2 = rng.uniform();
        auto const lambda = rng.uniform() * 2.0;
        auto const cfg = RewardConfig { .lambda = lambda };

        // lambda = 0 collapses to the rule reward whatever the judge says.
        CHECK(combined_reward(rule, m1, RewardConfig { .lambda = 0.0 }).combined == rule);

        auto const r1 = combined_reward(rule, m1, cfg).combined;
        auto const r2 = combined_reward(rule, m2, cfg).combined;
        CHECK((m1 <= m2) == (r1 <= r2));
        CHECK(r1 >= 0.0);
        CHECK(r1 <= 1.0 + lambda + 1e-15);
    }
}

TEST_CASE("rule reward")
{
    auto const task = generate_task(2, TaskFamily::Lookup);
    auto traj = Trajectory {};
    CHECK(rule_reward(task, traj) == 0.0);
    traj.final_answer = " " + task.ground_truth + ". ";
    CHECK(rule_reward(task, traj) == 1.0);
    traj.final_answer = task.ground_truth + "x";
    CHECK(rule_reward(task, traj) == 0.0);

    // The optional format penalty zeroes a correct answer reached through malformed calls.
    traj.final_answer = task.ground_truth;
    traj.actions = { Symbol::ArgGuess, Symbol::Answer, Symbol::ArgObservation };
    traj.old_logp = { -1.0, -1.0, -1.0 };
    CHECK(rule_reward(task, traj) == 1.0);
    CHECK(rule_reward(task, traj, RewardConfig { .lambda = 0.3, .format_penalty_enabled = true }) == 0.0);
}

TEST_CASE("group advantages")
{
    auto const a = normalize_advantages(std::vector { 1.0, 0.0, 0.0, 1.0 });
    REQUIRE(a.size() == 4);
    CHECK(a == std::vector { 1.0, -1.0, -1.0, 1.0 });

    auto const mixed = normalize_advantages(std::vector { 1.24, 0.27, 0.27, 1.24 });
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(near(mixed[i], a[i]));

    CHECK(normalize_advantages(std::vector { 0.4, 0.4, 0.4 }) == std::vector { 0.0, 0.0, 0.0 });
    CHECK(normalize_advantages(std::vector { 0.0, 1e-14 }) == std::vector { 0.0, 0.0 });
    CHECK_THROWS_AS(normalize_advantages(std::vector { 1.0 }), ValidationError);
    CHECK_THROWS_AS(normalize_advantages(std::vector<double> {}), ValidationError);
}

TEST_CASE("advantages are centred, unit scale and affine invariant")
{
    auto rng = Rng(13);
    for (auto i = 0; i < 1000; ++i)
    {
        auto const n = static_cast<std::size_t>(rng.uniform_int(2, 16));
        auto rewards = std::vector<double>(n);
        for (auto& r: rewards)
            r = rng.uniform() * 3.0 - 1.0;
        auto const adv = normalize_advantages(rewards);
        auto const mean = std::accumulate(adv.begin(), adv.end(), 0.0) / static_cast<double>(n);
        auto sq = 0.0;
        for (auto x: adv)
            sq += x * x;
        CHECK(std::abs(mean) < 1e-10);
        CHECK(std::abs(sq / static_cast<double>(n) - 1.0) < 1e-10);

        auto const scale = 0.1 + rng.uniform() * 10.0;
        auto const shift = rng.uniform() * 20.0 - 10.0;
        auto moved = rewards;
        for (auto& r: moved)
            r = scale * r + shift;
        auto const adv2 = normalize_advantages(moved);
        for (std::size_t k = 0; k < n; ++k)
            CHECK(std::abs(adv2[k] - adv[k]) < 1e-9);
    }
}

TEST_CASE("importance ratio and clipped surrogate")
{
    CHECK(importance_ratio(-2.0, -2.0) == 1.0);
    CHECK(near(importance_ratio(std::log(1.5), 0.0), 1.5));
    CHECK_THROWS_AS(importance_ratio(std::nan(""), 0.0), NumericError);
    CHECK_THROWS_AS(importance_ratio(1000.0, 0.0), NumericError);

    CHECK(near(clipped_surrogate(1.5, 1.0, 0.2), 1.2));
    CHECK(near(clipped_surrogate(0.5, 1.0, 0.2), 0.5));
    CHECK(near(clipped_surrogate(0.5, -1.0, 0.2), -0.8));
    CHECK(near(clipped_surrogate(1.5, -1.0, 0.2), -1.5));
    CHECK(near(clipped_surrogate(1.1, 2.0, 0.2), 2.2));
    CHECK(clipped_surrogate(3.0, 0.0, 0.2) == 0.0);

    // Never above the unclipped term.
    auto rng = Rng(21);
    for (auto i = 0; i < 1000; ++i)
    {
        auto const r = rng.uniform() * 3.0;
        auto const a = rng.normal();
        CHECK(clipped_surrogate(r, a, 0.2) <= r * a + 1e-15);
    }
}

TEST_CASE("KL penalty")
{
    auto rng = Rng(29);
    for (auto i = 0; i < 10000; ++i)
    {
        auto const cur = -rng.uniform() * 20.0;
        auto const ref = -rng.uniform() * 20.0;
        CHECK(kl_penalty(cur, ref) >= 0.0);
        CHECK(kl_penalty(cur, cur) == 0.0);
    }
    auto const ln2 = std::log(2.0);
    CHECK(std::abs(kl_penalty(-1.0, -1.0 + ln2) - (2.0 - ln2 - 1.0)) < 1e-12);
    CHECK(kl_penalty(-1.0, -1.0 + 1e-9) > 0.0);
}

TEST_CASE("group validation")
{
    auto rng = Rng(1);
    auto const p = random_params(rng, 8, kVocabSize, 0.3);
    auto groups = random_groups(rng, p, p, 1, 4);
    CHECK_NOTHROW(validate_group(groups[0]));
    groups[0].entries[1].trajectory.task_id = "other";
    CHECK_THROWS_AS(validate_group(groups[0]), ValidationError);
    groups[0].entries.erase(groups[0].entries.begin() + 1, groups[0].entries.end());
    CHECK_THROWS_AS(validate_group(groups[0]), ValidationError);
}

TEST_CASE("objective is zero when current, old and reference coincide")
{
    auto rng = Rng(3);
    auto const p = random_params(rng, 16, kVocabSize, 0.5);
    auto const groups = random_groups(rng, p, p, 3, 6);
    auto const res = objective_and_gradient(p, groups, TrainingConfig {});
    CHECK(std::abs(res.objective) < 1e-12);
    CHECK(res.mean_kl == 0.0);
    CHECK(res.clip_fraction == 0.0);
    CHECK(objective_value(p, groups, TrainingConfig {}) == res.objective);
}

TEST_CASE("objective gradient matches central finite differences")
{
    auto rng = Rng(37);
    auto worst = 0.0;
    for (auto instance = 0; instance < 20; ++instance)
    {
        auto const F = static_cast<std::size_t>(rng.uniform_int(4, 12));
        auto const old = random_params(rng, F, kVocabSize, 0.5);
        auto const ref = perturbed(old, rng, 0.2);
        auto const cur = perturbed(old, rng, 0.15);
        auto const groups = random_groups(rng, old, ref, 2, 4);
        auto cfg = TrainingConfig {};
        cfg.kl_beta = 0.05;
        auto const analytic = objective_and_gradient(cur, groups, cfg).gradient;
        auto const numeric = numeric_gradient(cur, [&](const PolicyParams& p) { return objective_value(p, groups, cfg); });
        worst = std::max(worst, relative_error(analytic, numeric));
    }
    CHECK(worst <= 1e-4);
}

TEST_CASE("a small step along the gradient increases the objective")
{
    auto rng = Rng(43);
    for (auto instance = 0; instance < 20; ++instance)
    {
        auto const old = random_params(rng, 12, kVocabSize, 0.5);
        auto const groups = random_groups(rng, old, old, 3, 4);
        auto const cfg = TrainingConfig {};
        auto const res = objective_and_gradient(old, groups, cfg);
        if (res.gradient.norm() < 1e-9)
            continue;
        auto const next = apply_update(old, res.gradient, 1e-3);
        CHECK(objective_value(next, groups, cfg) > res.objective);
    }
}

TEST_CASE("apply_update")
{
    auto rng = Rng(5);
    auto const p = random_params(rng, 6, kVocabSize, 1.0);
    auto const g = random_params(rng, 6, kVocabSize, 1.0).weights();
    CHECK(apply_update(p, Matrix::Zero(6, kVocabSize), 0.5) == p);
    CHECK(apply_update(p, g, 0.0) == p);
    CHECK((apply_update(p, g, 0.25).weights() - (p.weights() + 0.25 * g)).norm() == 0.0);
    CHECK_THROWS_AS(apply_update(p, Matrix::Zero(5, kVocabSize), 0.1), ValidationError);
}

TEST_CASE("Adam ascent")
{
    auto rng = Rng(15);
    auto p = random_params(rng, 5, kVocabSize, 1.0);
    auto const start = p;
    auto const g = random_params(rng, 5, kVocabSize, 1.0).weights();
    auto adam = AdamAscent(5, kVocabSize);
    adam.step(p, g, 0.01);
    CHECK(adam.steps() == 1);
    // The bias-corrected first step moves each weight by about lr in the gradient's direction.
    for (Eigen::Index i = 0; i < g.size(); ++i)
    {
        auto const delta = p.weights().data()[i] - start.weights().data()[i];
        auto const expected = 0.01 * g.data()[i] / (std::abs(g.data()[i]) + 1e-8);
        CHECK(std::abs(delta - expected) < 1e-12);
    }

    auto copy = AdamAscent(5, kVocabSize);
    copy.restore(adam.first_moment(), adam.second_moment(), adam.steps());
    auto a = p;
    auto b = p;
    adam.step(a, g, 0.01);
    copy.step(b, g, 0.01);
    CHECK(a == b);
    CHECK_THROWS_AS(copy.restore(Matrix::Zero(2, 2), Matrix::Zero(2, 2), 1), ValidationError);
}

TEST_CASE("training config validation")
{
    CHECK_NOTHROW(TrainingConfig {}.validate());
    auto bad = TrainingConfig {};
    bad.group_size = 1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = TrainingConfig {};
    bad.clip_eps = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = TrainingConfig {};
    bad.minibatch_tasks = 9;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = TrainingConfig {};
    bad.kl_beta = -1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}
