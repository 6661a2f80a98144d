// SPDX-License-Identifier: Apache-2.0
#pragma once

// Group-relative policy optimization. Rewards are z-normalized within a group
// (one task's rollouts, or the pooled first- and second-stage rollouts of a
// task), and the policy ascends
//
//   J = mean over groups of (1/|group|) * sum_i [ min(r_i A_i, clip(r_i, 1-eps, 1+eps) A_i) - beta * KL_i ]
//
// with sequence-level ratios r_i = pi(o_i) / pi_old(o_i) and the k3 estimator
// KL_i = exp(ref_i - cur_i) - (ref_i - cur_i) - 1.

#include <reagent/core_types.hpp>
#include <reagent/policy.hpp>

#include <span>
#include <string>
#include <vector>

namespace reagent
{

enum class OptimizerKind : std::uint8_t
{
    Sgd,
    Adam,
};

/// Which parameters play the KL reference role.
enum class ReferencePolicy : std::uint8_t
{
    Initial,    // parameters at the start of the run
    BatchStart, // the sampling policy of the current batch
};

inline constexpr std::size_t kDefaultGroupSize = 8;

struct TrainingConfig
{
    std::size_t group_size = kDefaultGroupSize;
    double clip_eps = 0.2;
    double kl_beta = 0.001;
    double learning_rate = 1e-2;
    std::size_t batch_tasks = 8;
    std::size_t minibatch_tasks = 4;
    OptimizerKind optimizer = OptimizerKind::Sgd;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    ReferencePolicy reference = ReferencePolicy::Initial;
    std::uint64_t seed = 0;

    void validate() const;
};

struct ScoredEntry
{
    Trajectory trajectory;
    Context context; // conditioning context with the trajectory's observations replayed
    RewardBreakdown reward;
    double new_logp = 0.0; // last value computed under the live parameters
    double old_logp = 0.0; // under the sampling parameters, temperature 1
    double ref_logp = 0.0; // under the reference parameters, temperature 1
    double advantage = 0.0;
};

struct ScoredGroup
{
    std::string task_id;
    std::vector<ScoredEntry> entries;
};

inline constexpr double kDegenerateStd = 1e-12;

/// (R_i - mean) / std with population std; all zeros when std < 1e-12.
auto normalize_advantages(std::span<const double> rewards) -> std::vector<double>;

/// Sets each entry's advantage from the group's combined rewards.
void assign_advantages(ScoredGroup& group);

/// Throws ValidationError when the group breaks its invariants.
void validate_group(const ScoredGroup& group);

auto importance_ratio(double new_total_logp, double old_total_logp) -> double;

auto clipped_surrogate(double ratio, double advantage, double eps) -> double;

/// k3 estimator; >= 0 and zero iff the arguments are equal.
auto kl_penalty(double logp_theta, double logp_ref) -> double;

struct ObjectiveResult
{
    double objective = 0.0;
    Matrix gradient;
    double mean_kl = 0.0;
    double clip_fraction = 0.0; // entries whose clipped branch is active
};

/// J and dJ/dW. Current log-probabilities are recomputed from `params`;
/// advantages, old and reference log-probabilities are taken as constants.
/// No gradient flows through an active clipped branch.
auto objective_and_gradient(const PolicyParams& params, std::span<const ScoredGroup> groups,
                            const TrainingConfig& cfg) -> ObjectiveResult;

/// J only.
auto objective_value(const PolicyParams& params, std::span<const ScoredGroup> groups, const TrainingConfig& cfg)
    -> double;

/// Plain gradient ascent: params + lr * grad.
auto apply_update(const PolicyParams& params, const Matrix& grad, double learning_rate) -> PolicyParams;

/// Ascent with adaptive moment estimates.
class AdamAscent
{
  public:
    AdamAscent(std::size_t feature_dim, std::size_t vocab_size, double beta1 = 0.9, double beta2 = 0.999,
               double epsilon = 1e-8);

    void step(PolicyParams& params, const Matrix& grad, double learning_rate);

    [[nodiscard]] auto first_moment() const noexcept -> const Matrix& { return _m; }
    [[nodiscard]] auto second_moment() const noexcept -> const Matrix& { return _v; }
    [[nodiscard]] auto steps() const noexcept -> std::uint64_t { return _t; }
    [[nodiscard]] auto beta1() const noexcept -> double { return _beta1; }
    [[nodiscard]] auto beta2() const noexcept -> double { return _beta2; }
    [[nodiscard]] auto epsilon() const noexcept -> double { return _epsilon; }
    void restore(Matrix m, Matrix v, std::uint64_t t);

  private:
    Matrix _m;
    Matrix _v;
    std::uint64_t _t = 0;
    double _beta1;
    double _beta2;
    double _epsilon;
};

} // namespace reagent
