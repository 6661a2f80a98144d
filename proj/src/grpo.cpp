// SPDX-License-Identifier: Apache-2.0
#include <reagent/errors.hpp>
#include <reagent/grpo.hpp>

#include <algorithm>
#include <cmath>

namespace reagent
{

void TrainingConfig::validate() const
{
    if (group_size < 2)
        throw ConfigError("group_size must be >= 2");
    if (!(clip_eps > 0.0 && clip_eps < 1.0))
        throw ConfigError("clip_eps must lie in (0, 1)");
    if (!(kl_beta >= 0.0) || !std::isfinite(kl_beta))
        throw ConfigError("kl_beta must be finite and >= 0");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
        throw ConfigError("learning_rate must be finite and >= 0");
    if (batch_tasks < 1 || minibatch_tasks < 1 || minibatch_tasks > batch_tasks)
        throw ConfigError("need 1 <= minibatch_tasks <= batch_tasks");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0 && adam_epsilon > 0.0))
        throw ConfigError("invalid adam hyper-parameters");
}

auto normalize_advantages(std::span<const double> rewards) -> std::vector<double>
{
    if (rewards.size() < 2)
        throw ValidationError("advantage normalization needs at least two rewards");
    auto const n = static_cast<double>(rewards.size());
    auto mean = 0.0;
    for (auto r: rewards)
        mean += r;
    mean /= n;
    auto var = 0.0;
    for (auto r: rewards)
        var += (r - mean) * (r - mean);
    auto const sd = std::sqrt(var / n);

    auto out = std::vector<double>(rewards.size(), 0.0);
    if (!std::isfinite(sd))
        throw NumericError("non-finite reward spread");
    if (sd < kDegenerateStd)
        return out;
    for (std::size_t i = 0; i < rewards.size(); ++i)
        out[i] = (rewards[i] - mean) / sd;
    return out;
}

void assign_advantages(ScoredGroup& group)
{
    auto rewards = std::vector<double> {};
    rewards.reserve(group.entries.size());
    for (auto const& e: group.entries)
        rewards.push_back(e.reward.combined);
    auto const adv = normalize_advantages(rewards);
    for (std::size_t i = 0; i < adv.size(); ++i)
        group.entries[i].advantage = adv[i];
}

void validate_group(const ScoredGroup& group)
{
    if (group.entries.size() < 2)
        throw ValidationError("group " + group.task_id + " has fewer than two entries");
    for (auto const& e: group.entries)
    {
        if (e.trajectory.task_id != group.task_id)
            throw ValidationError("group " + group.task_id + " mixes tasks (found " + e.trajectory.task_id + ")");
        if (!std::isfinite(e.advantage) || !std::isfinite(e.old_logp) || !std::isfinite(e.ref_logp))
            throw ValidationError("group " + group.task_id + " has non-finite entry values");
    }
}

auto importance_ratio(double new_total_logp, double old_total_logp) -> double
{
    if (!std::isfinite(new_total_logp) || !std::isfinite(old_total_logp))
        throw NumericError("importance ratio of non-finite log-probabilities");
    auto const r = std::exp(new_total_logp - old_total_logp);
    if (!std::isfinite(r))
        throw NumericError("importance ratio overflow");
    return r;
}

auto clipped_surrogate(double ratio, double advantage, double eps) -> double
{
    auto const clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
    return std::min(ratio * advantage, clipped * advantage);
}

auto kl_penalty(double logp_theta, double logp_ref) -> double
{
    auto const x = logp_ref - logp_theta;
    auto const k = std::expm1(x) - x;
    if (!std::isfinite(k))
        throw NumericError("non-finite KL estimate");
    return std::max(k, 0.0);
}

namespace
{

template <bool WithGradient>
auto evaluate_objective(const PolicyParams& params, std::span<const ScoredGroup> groups, const TrainingConfig& cfg)
    -> ObjectiveResult
{
    if (groups.empty())
        throw ValidationError("objective over an empty batch");

    auto result = ObjectiveResult {};
    if constexpr (WithGradient)
        result.gradient = Matrix::Zero(params.weights().rows(), params.weights().cols());

    auto entryCount = std::size_t { 0 };
    auto clipped = std::size_t { 0 };
    auto klSum = 0.0;

    for (auto const& group: groups)
    {
        validate_group(group);
        auto const weight = 1.0 / (static_cast<double>(groups.size()) * static_cast<double>(group.entries.size()));
        for (auto const& e: group.entries)
        {
            auto const actions = std::span<const Symbol>(e.trajectory.actions);
            auto const cur = log_prob(params, e.context, actions).total;
            auto const r = importance_ratio(cur, e.old_logp);
            auto const a = e.advantage;
            auto const unclipped = r * a;
            auto const clippedValue = std::clamp(r, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * a;
            auto const kl = kl_penalty(cur, e.ref_logp);

            result.objective += weight * (std::min(unclipped, clippedValue) - cfg.kl_beta * kl);
            klSum += kl;
            ++entryCount;
            auto const clipActive = clippedValue < unclipped;
            clipped += clipActive ? 1 : 0;

            if constexpr (WithGradient)
            {
                // d(r A)/dW = r A dlogpi; d(k3)/dW = (1 - exp(ref - cur)) dlogpi.
                auto coeff = clipActive ? 0.0 : unclipped;
                coeff += cfg.kl_beta * std::expm1(e.ref_logp - cur);
                if (coeff != 0.0)
                    accumulate_grad_log_prob(params, e.context, actions, weight * coeff, result.gradient);
            }
        }
    }
    result.mean_kl = klSum / static_cast<double>(entryCount);
    result.clip_fraction = static_cast<double>(clipped) / static_cast<double>(entryCount);
    return result;
}

} // namespace

auto objective_and_gradient(const PolicyParams& params, std::span<const ScoredGroup> groups,
                            const TrainingConfig& cfg) -> ObjectiveResult
{
    return evaluate_objective<true>(params, groups, cfg);
}

auto objective_value(const PolicyParams& params, std::span<const ScoredGroup> groups, const TrainingConfig& cfg)
    -> double
{
    return evaluate_objective<false>(params, groups, cfg).objective;
}

auto apply_update(const PolicyParams& params, const Matrix& grad, double learning_rate) -> PolicyParams
{
    if (grad.rows() != params.weights().rows() || grad.cols() != params.weights().cols())
        throw ValidationError("update shape mismatch");
    if (learning_rate == 0.0)
        return params;
    return PolicyParams(Matrix(params.weights() + learning_rate * grad));
}

AdamAscent::AdamAscent(std::size_t feature_dim, std::size_t vocab_size, double beta1, double beta2, double epsilon):
    _m(Matrix::Zero(static_cast<Eigen::Index>(feature_dim), static_cast<Eigen::Index>(vocab_size))),
    _v(_m),
    _beta1(beta1),
    _beta2(beta2),
    _epsilon(epsilon)
{
}

void AdamAscent::step(PolicyParams& params, const Matrix& grad, double learning_rate)
{
    if (grad.rows() != _m.rows() || grad.cols() != _m.cols() || params.weights().rows() != _m.rows()
        || params.weights().cols() != _m.cols())
        throw ValidationError("update shape mismatch");
    ++_t;
    _m = _beta1 * _m + (1.0 - _beta1) * grad;
    _v = _beta2 * _v + (1.0 - _beta2) * grad.cwiseProduct(grad);
    auto const c1 = 1.0 - std::pow(_beta1, static_cast<double>(_t));
    auto const c2 = 1.0 - std::pow(_beta2, static_cast<double>(_t));
    params.weights().array() += learning_rate * (_m.array() / c1) / ((_v.array() / c2).sqrt() + _epsilon);
    if (!params.weights().allFinite())
        throw NumericError("non-finite parameters after update");
}

void AdamAscent::restore(Matrix m, Matrix v, std::uint64_t t)
{
    if (m.rows() != _m.rows() || m.cols() != _m.cols() || v.rows() != _v.rows() || v.cols() != _v.cols())
        throw ValidationError("optimizer state shape mismatch");
    _m = std::move(m);
    _v = std::move(v);
    _t = t;
}

} // namespace reagent
