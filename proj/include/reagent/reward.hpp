// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <reagent/core_types.hpp>

namespace reagent
{

/// Weight of the judge score relative to the correctness reward.
inline constexpr double kDefaultLambda = 0.3;

struct RewardConfig
{
    double lambda = kDefaultLambda;
    /// When set, a correct answer from a trajectory containing malformed calls earns no rule reward.
    bool format_penalty_enabled = false;

    void validate() const;
};

/// 1 iff the normalized final answer equals the normalized ground truth.
auto rule_reward(const Task& task, const Trajectory& traj, const RewardConfig& cfg = {}) -> double;

auto model_reward(const Judgment& judgment) -> double;

/// R = rule + lambda * model.
auto combined_reward(double rule, double model, const RewardConfig& cfg) -> RewardBreakdown;

} // namespace reagent
