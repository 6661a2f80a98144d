// SPDX-License-Identifier: Apache-2.0
#include <reagent/environment.hpp>
#include <reagent/errors.hpp>
#include <reagent/reward.hpp>

#include <algorithm>
#include <cmath>

namespace reagent
{

void RewardConfig::validate() const
{
    if (!std::isfinite(lambda) || lambda < 0.0)
        throw ConfigError("lambda must be finite and >= 0, got " + std::to_string(lambda));
}

auto rule_reward(const Task& task, const Trajectory& traj, const RewardConfig& cfg) -> double
{
    if (traj.final_answer.empty())
        return 0.0;
    if (normalize_answer(traj.final_answer) != normalize_answer(task.ground_truth))
        return 0.0;
    if (cfg.format_penalty_enabled)
    {
        auto const frames = decode_frames(traj.actions);
        if (std::ranges::any_of(frames, [](const Frame& f) { return f.kind == Frame::Kind::Malformed; }))
            return 0.0;
    }
    return 1.0;
}

auto model_reward(const Judgment& judgment) -> double
{
    return judgment.score();
}

auto combined_reward(double rule, double model, const RewardConfig& cfg) -> RewardBreakdown
{
    cfg.validate();
    if (rule != 0.0 && rule != 1.0)
        throw ValidationError("rule reward must be 0 or 1");
    if (!(model >= 0.0 && model <= 1.0))
        throw ValidationError("model reward must lie in [0, 1]");
    return RewardBreakdown { .rule = rule, .model = model, .lambda = cfg.lambda, .combined = rule + cfg.lambda * model };
}

} // namespace reagent
