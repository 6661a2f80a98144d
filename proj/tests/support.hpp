// SPDX-License-Identifier: Apache-2.0
#pragma once

// Generators and numeric helpers shared by the unit and acceptance tests.

#include <reagent/core_types.hpp>
#include <reagent/environment.hpp>
#include <reagent/grpo.hpp>
#include <reagent/policy.hpp>
#include <reagent/random.hpp>

#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

namespace reagent::testing
{

inline auto random_word(Rng& rng, std::size_t len = 5) -> std::string
{
    auto out = std::string {};
    for (std::size_t i = 0; i < len; ++i)
        out += static_cast<char>('a' + rng.uniform_int(0, 25));
    return out;
}

inline auto random_symbol(Rng& rng, std::size_t vocab = kVocabSize) -> Symbol
{
    return static_cast<Symbol>(rng.uniform_int(0, static_cast<std::int64_t>(vocab) - 1));
}

inline auto random_actions(Rng& rng, std::size_t min_len, std::size_t max_len, std::size_t vocab = kVocabSize)
    -> std::vector<Symbol>
{
    auto const n = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(min_len),
                                                             static_cast<std::int64_t>(max_len)));
    auto out = std::vector<Symbol> {};
    for (std::size_t i = 0; i < n; ++i)
        out.push_back(random_symbol(rng, vocab));
    return out;
}

/// A first-stage or refinement context with a few observations interleaved.
inline auto random_context(Rng& rng, std::size_t horizon) -> Context
{
    auto prompt = random_word(rng, 4) + " " + random_word(rng, 6);
    auto ctx = rng.uniform() < 0.5
                   ? Context::for_task(prompt)
                   : Context::refinement(prompt, random_actions(rng, 1, 6), random_word(rng, 7) + " " + random_word(rng, 3));
    auto after = std::size_t { 0 };
    while (after < horizon && rng.uniform() < 0.6)
    {
        after += static_cast<std::size_t>(rng.uniform_int(1, 3));
        ctx.add_observation(after, random_word(rng, 6));
    }
    return ctx;
}

inline auto random_params(Rng& rng, std::size_t feature_dim, std::size_t vocab, double scale) -> PolicyParams
{
    auto params = PolicyParams(feature_dim, vocab);
    for (Eigen::Index i = 0; i < params.weights().size(); ++i)
        params.weights().data()[i] = scale * rng.normal();
    return params;
}

/// ||a - b|| / max(||a||, ||b||), zero when both vanish.
inline auto relative_error(const Matrix& a, const Matrix& b) -> double
{
    auto const scale = std::max(a.norm(), b.norm());
    return scale == 0.0 ? 0.0 : (a - b).norm() / scale;
}

/// Central differences of f with respect to every weight.
template <typename F>
auto numeric_gradient(const PolicyParams& params, F&& f, double h = 1e-5) -> Matrix
{
    auto grad = Matrix(params.weights().rows(), params.weights().cols());
    auto probe = params;
    for (Eigen::Index r = 0; r < grad.rows(); ++r)
        for (Eigen::Index c = 0; c < grad.cols(); ++c)
        {
            auto const w = params.weights()(r, c);
            probe.weights()(r, c) = w + h;
            auto const up = f(probe);
            probe.weights()(r, c) = w - h;
            auto const down = f(probe);
            probe.weights()(r, c) = w;
            grad(r, c) = (up - down) / (2.0 * h);
        }
    return grad;
}

/// Random scored groups over random contexts and action sequences. Old and
/// reference log-probabilities are taken from `old_params` and `ref_params`.
inline auto random_groups(Rng& rng, const PolicyParams& old_params, const PolicyParams& ref_params,
                          std::size_t groups, std::size_t group_size) -> std::vector<ScoredGroup>
{
    auto out = std::vector<ScoredGroup> {};
    for (std::size_t g = 0; g < groups; ++g)
    {
        auto group = ScoredGroup { .task_id = "task-" + std::to_string(g), .entries = {} };
        for (std::size_t i = 0; i < group_size; ++i)
        {
            auto actions = random_actions(rng, 1, 5, old_params.vocab_size());
            auto ctx = random_context(rng, actions.size());
            auto entry = ScoredEntry {
                .trajectory = Trajectory { .task_id = group.task_id,
                                           .stage = Stage::First,
                                           .actions = actions,
                                           .tool_calls = {},
                                           .final_answer = {},
                                           .old_logp = std::vector<double>(actions.size(), 0.0),
                                           .context_fingerprint = ctx.fingerprint() },
                .context = ctx,
                .reward = RewardBreakdown { .rule = 0.0, .model = 0.0, .lambda = 0.0, .combined = rng.uniform() },
                .new_logp = 0.0,
                .old_logp = log_prob(old_params, ctx, actions).total,
                .ref_logp = log_prob(ref_params, ctx, actions).total,
                .advantage = 0.0,
            };
            group.entries.push_back(std::move(entry));
        }
        assign_advantages(group);
        out.push_back(std::move(group));
    }
    return out;
}

/// A fresh directory under the system temp path, removed on destruction.
class TempDir
{
  public:
    explicit TempDir(const std::string& tag)
    {
        static auto counter = 0;
        _path = std::filesystem::temp_directory_path() /
                ("reagent-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(_path);
        std::filesystem::create_directories(_path);
    }
    ~TempDir() { std::filesystem::remove_all(_path); }
    TempDir(const TempDir&) = delete;
    auto operator=(const TempDir&) -> TempDir& = delete;

    [[nodiscard]] auto path() const -> const std::filesystem::path& { return _path; }

  private:
    std::filesystem::path _path;
};

} // namespace reagent::testing
