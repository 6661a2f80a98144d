// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <reagent/errors.hpp>

#include <doctest.h>

#include <cmath>
#include <fstream>

using namespace reagent;
using namespace reagent::testing;

TEST_CASE("parameter validation")
{
    CHECK_THROWS_AS(PolicyParams(0, 4), ValidationError);
    CHECK_THROWS_AS(PolicyParams(4, 1), ValidationError);
    auto w = Matrix::Zero(2, 3).eval();
    w(1, 2) = std::nan("");
    CHECK_THROWS_AS(PolicyParams { w }, ValidationError);
    auto const p = PolicyParams(8);
    CHECK(p.feature_dim() == 8);
    CHECK(p.vocab_size() == kVocabSize);
    CHECK(p.weights().isZero());
}

TEST_CASE("zero weights give a uniform policy")
{
    auto const params = PolicyParams(32);
    auto const ctx = Context::for_task("lookup amber");
    auto const uniform = -std::log(static_cast<double>(kVocabSize));

    auto rng = Rng(1);
    for (auto temperature: { 0.7, 1.0, 2.5 })
    {
        auto const s = sample(params, ctx, temperature, 20, rng);
        for (auto lp: s.logp)
            CHECK(lp == doctest::Approx(uniform).epsilon(1e-14));
    }

    auto const actions = std::vector<Symbol> { Symbol::ToolSearch, Symbol::ArgQuery, Symbol::End };
    CHECK(log_prob(params, ctx, actions).total == doctest::Approx(3.0 * uniform).epsilon(1e-14));
}

TEST_CASE("closed-form two-symbol softmax")
{
    for (auto c: { 0.0, 0.5, 2.0, -3.0, 30.0 })
    {
        auto w = Matrix::Zero(1, 2).eval();
        w(0, 0) = c;
        auto const params = PolicyParams(w);
        auto const lp = step_log_probs(params, SparseFeatures { { 0, 1.0 } }, 1.0);
        CHECK(lp(0) == doctest::Approx(-std::log1p(std::exp(-c))).epsilon(1e-13));
    }
    auto const lp = step_log_probs(PolicyParams(1, 2), SparseFeatures { { 0, 1.0 } }, 1.0);
    CHECK(lp(0) == doctest::Approx(-std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("softmax sums to one at every step")
{
    auto rng = Rng(2);
    for (auto i = 0; i < 100; ++i)
    {
        auto const params = random_params(rng, 24, kVocabSize, 2.0);
        auto const ctx = random_context(rng, 6);
        auto const prefix = random_actions(rng, 0, 6);
        for (auto temperature: { 0.6, 1.0 })
        {
            auto const lp = step_log_probs(params, ctx.features(prefix, 24), temperature);
            CHECK(std::abs(lp.array().exp().sum() - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("non-finite logits raise a numeric error")
{
    auto w = Matrix::Zero(1, 2).eval();
    w(0, 0) = 1e308;
    auto const params = PolicyParams(w);
    CHECK_THROWS_AS(step_log_probs(params, SparseFeatures { { 0, 1e10 } }, 1.0), NumericError);
}

TEST_CASE("gradient of a single step at zero weights")
{
    auto const params = PolicyParams(16, 2);
    auto const ctx = Context::for_task("lookup amber");
    auto const actions = std::vector<Symbol> { static_cast<Symbol>(0) };
    auto const g = grad_log_prob(params, ctx, actions);
    auto const f = ctx.featurize({}, 16);
    CHECK((g.col(0) - 0.5 * f).norm() < 1e-15);
    CHECK((g.col(1) + 0.5 * f).norm() < 1e-15);

    auto const empty = grad_log_prob(params, ctx, std::vector<Symbol> {});
    CHECK(empty.isZero());
}

TEST_CASE("grad_log_prob matches central finite differences")
{
    auto rng = Rng(31);
    auto worst = 0.0;
    for (auto instance = 0; instance < 50; ++instance)
    {
        auto const F = static_cast<std::size_t>(rng.uniform_int(4, 24));
        auto const params = random_params(rng, F, kVocabSize, 0.7);
        auto const actions = random_actions(rng, 1, 8);
        auto const ctx = random_context(rng, actions.size());
        auto const analytic = grad_log_prob(params, ctx, actions);
        auto const numeric =
            numeric_gradient(params, [&](const PolicyParams& p) { return log_prob(p, ctx, actions).total; });
        worst = std::max(worst, relative_error(analytic, numeric));
    }
    CHECK(worst <= 1e-5);
}

TEST_CASE("log_prob agrees with sampling at temperature one")
{
    auto rng = Rng(8);
    auto const params = random_params(rng, 32, kVocabSize, 0.5);
    auto const ctx = Context::for_task("compute 3*4+1");
    auto const s = sample(params, ctx, 1.0, 30, rng);
    auto const lp = log_prob(params, ctx, s.actions);
    REQUIRE(lp.per_token.size() == s.logp.size());
    for (std::size_t i = 0; i < s.logp.size(); ++i)
        CHECK(lp.per_token[i] == doctest::Approx(s.logp[i]).epsilon(1e-13));
    auto total = 0.0;
    for (auto x: lp.per_token)
        total += x;
    CHECK(lp.total == doctest::Approx(total).epsilon(1e-14));
}

TEST_CASE("sampling is a pure function of its inputs")
{
    auto rng = Rng(4);
    auto const params = random_params(rng, 32, kVocabSize, 1.0);
    auto const ctx = Context::for_task("read notes-3.txt");
    auto a = Rng(99);
    auto b = Rng(99);
    auto const s1 = sample(params, ctx, 0.7, 40, a);
    auto const s2 = sample(params, ctx, 0.7, 40, b);
    CHECK(s1.actions == s2.actions);
    CHECK(s1.logp == s2.logp);
    CHECK(s1.actions.size() <= 40);
    if (s1.actions.size() < 40)
        CHECK(s1.actions.back() == Symbol::End);
}

TEST_CASE("log_prob is invariant to a uniform logit shift")
{
    auto rng = Rng(12);
    auto params = random_params(rng, 1, kVocabSize, 1.0);
    auto const ctx = random_context(rng, 4);
    auto const actions = random_actions(rng, 2, 6);
    auto const before = log_prob(params, ctx, actions).total;
    params.weights().row(0).array() += 3.75;
    auto const after = log_prob(params, ctx, actions).total;
    CHECK(after == doctest::Approx(before).epsilon(1e-12));
}

TEST_CASE("out-of-vocabulary actions are rejected")
{
    auto const params = PolicyParams(8, 3);
    auto const ctx = Context::for_task("lookup x");
    auto const actions = std::vector<Symbol> { static_cast<Symbol>(5) };
    CHECK_THROWS_AS(log_prob(params, ctx, actions), ValidationError);
    CHECK_THROWS_AS(grad_log_prob(params, ctx, actions), ValidationError);
}

TEST_CASE("featurization")
{
    auto const a = Context::for_task("lookup amber");
    auto const b = Context::for_task("lookup amber");
    auto const prefix = std::vector<Symbol> { Symbol::ToolSearch };
    CHECK(a.featurize(prefix, 64) == b.featurize(prefix, 64));
    CHECK(a.fingerprint() == b.fingerprint());

    auto const first = std::vector<Symbol> { Symbol::ToolSearch, Symbol::ArgGuess };
    auto const r1 = Context::refinement("lookup amber", first, "Tool arguments were invented.");
    auto const r2 = Context::refinement("lookup amber", first, "No final answer was given.");
    CHECK(r1.featurize(prefix, 64) != r2.featurize(prefix, 64));
    CHECK(r1.featurize(prefix, 64) != a.featurize(prefix, 64));
    CHECK(r1.fingerprint() != r2.fingerprint());
    CHECK(r1.fingerprint() != a.fingerprint());

    // Truncation drops the tail of long critiques.
    auto const longA = Context::refinement("lookup amber", first, std::string(50, 'x') + " tail one", 50);
    auto const longB = Context::refinement("lookup amber", first, std::string(50, 'x') + " tail two", 50);
    CHECK(longA.fingerprint() == longB.fingerprint());
    REQUIRE(longA.critique().has_value());
    CHECK(longA.critique()->size() == 50);

    auto obs = Context::for_task("lookup amber");
    obs.add_observation(2, "no results");
    CHECK(obs.featurize(first, 64) != a.featurize(first, 64));
    CHECK_THROWS_AS(obs.add_observation(1, "late"), ValidationError);
}

TEST_CASE("frozen snapshots")
{
    auto rng = Rng(6);
    auto live = random_params(rng, 16, kVocabSize, 0.5);
    auto const ctx = Context::for_task("lookup amber");
    auto const actions = std::vector<Symbol> { Symbol::ToolSearch, Symbol::ArgQuery, Symbol::End };
    auto const frozen = snapshot(live);
    auto const before = frozen.log_prob(ctx, actions).total;
    CHECK(before == log_prob(live, ctx, actions).total);
    CHECK(snapshot(live) == frozen);

    live.weights().array() += 0.25;
    CHECK(frozen.log_prob(ctx, actions).total == before);
    CHECK(!(snapshot(live) == frozen));
}

TEST_CASE("checkpoints are bit exact")
{
    auto const dir = TempDir("ckpt");
    auto rng = Rng(9);
    auto const params = random_params(rng, 37, kVocabSize, 3.0);
    auto const path = dir.path() / "p.ckpt";
    save_checkpoint(path, params);
    auto const back = load_checkpoint(path);
    CHECK(back == params);
    CHECK(back.checksum() == params.checksum());
    CHECK(std::filesystem::file_size(path) == 24 + 37 * kVocabSize * sizeof(double));

    std::filesystem::resize_file(path, 40);
    CHECK_THROWS_AS(load_checkpoint(path), DecodeError);
    {
        auto out = std::ofstream(path, std::ios::binary | std::ios::trunc);
        out << "NOTACKPTxxxxxxxxxxxxxxxxxxxxxx";
    }
    CHECK_THROWS_AS(load_checkpoint(path), DecodeError);
}
