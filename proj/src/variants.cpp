// SPDX-License-Identifier: Apache-2.0
#include <reagent/parallel.hpp>
#include <reagent/random.hpp>
#include <reagent/records.hpp>
#include <reagent/variants.hpp>

#include <nlohmann/json.hpp>

#include <fstream>
#include <numeric>

namespace reagent
{

namespace
{

constexpr std::uint64_t kOrderStream = 0x0bde;
constexpr std::uint64_t kRolloutStream = 0x5a3f;
constexpr std::uint64_t kEvalStream = 0xe7a1;
constexpr std::uint64_t kRefineStream = 0xc0de;

struct JudgeOutcome
{
    std::optional<Judgment> judgment;
    bool failed = false;
};

auto try_judge(JudgeBackend& backend, const Task& task, const Trajectory& traj) -> JudgeOutcome
{
    try
    {
        return { judge(backend, task, traj), false };
    }
    catch (const Error&)
    {
        return { std::nullopt, true };
    }
}

auto aggregate(std::vector<FamilyStats> families, std::size_t k) -> EvalTable
{
    auto table = EvalTable { .k = k, .families = {}, .pass_at_1 = 0.0, .pass_at_k = 0.0 };
    auto total = std::size_t { 0 };
    for (auto& f: families)
    {
        if (f.tasks == 0)
            continue;
        table.pass_at_1 += f.pass_at_1;
        table.pass_at_k += f.pass_at_k;
        total += f.tasks;
        f.pass_at_1 /= static_cast<double>(f.tasks);
        f.pass_at_k /= static_cast<double>(f.tasks);
        table.families.push_back(f);
    }
    if (total > 0)
    {
        table.pass_at_1 /= static_cast<double>(total);
        table.pass_at_k /= static_cast<double>(total);
    }
    return table;
}

} // namespace

auto to_string(Variant v) -> std::string_view
{
    switch (v)
    {
        case Variant::C: return "c";
        case Variant::R: return "r";
        case Variant::U: return "u";
        case Variant::Baseline: return "baseline";
    }
    return "?";
}

auto parse_variant(std::string_view text) -> std::optional<Variant>
{
    for (auto v: { Variant::C, Variant::R, Variant::U, Variant::Baseline })
        if (to_string(v) == text)
            return v;
    return std::nullopt;
}

// -- evaluation ------------------------------------------------------------------

auto evaluate(const Agent& agent, std::span<const Task> tasks, std::size_t k, std::size_t threads) -> EvalTable
{
    if (k < 1)
        throw ValidationError("pass@k needs k >= 1");
    auto firstOk = std::vector<char>(tasks.size(), 0);
    auto anyOk = std::vector<char>(tasks.size(), 0);
    parallel_for(tasks.size(), threads, [&](std::size_t j) {
        for (std::size_t s = 0; s < k; ++s)
        {
            auto const ok = rule_reward(tasks[j], agent(tasks[j], j, s)) == 1.0;
            if (s == 0)
                firstOk[j] = ok;
            anyOk[j] |= static_cast<char>(ok);
        }
    });

    auto families = std::vector<FamilyStats> {};
    for (auto f: kAllFamilies)
        families.push_back(FamilyStats { .family = f, .tasks = 0, .pass_at_1 = 0.0, .pass_at_k = 0.0 });
    for (std::size_t j = 0; j < tasks.size(); ++j)
    {
        auto& row = families[static_cast<std::size_t>(tasks[j].family)];
        ++row.tasks;
        row.pass_at_1 += firstOk[j];
        row.pass_at_k += anyOk[j];
    }
    return aggregate(std::move(families), k);
}

auto evaluate(const PolicyParams& params, std::span<const Task> tasks, const EvalConfig& cfg) -> EvalTable
{
    auto const caps = EpisodeCaps { .max_steps = cfg.max_steps, .max_len = cfg.max_len, .temperature = cfg.temperature };
    auto const agent = [&](const Task& task, std::size_t index, std::size_t sample) {
        auto rng = Rng(mix_seed(cfg.seed, kEvalStream, index, sample));
        return run_episode(params, Context::for_task(task.prompt), task, Stage::First, caps, rng).trajectory;
    };
    return evaluate(agent, tasks, cfg.k, cfg.threads);
}

auto evaluate_oracle_agent(std::span<const Task> tasks, std::size_t max_steps) -> EvalTable
{
    auto const caps = EpisodeCaps { .max_steps = max_steps, .max_len = 48, .temperature = 1.0 };
    auto const agent = [&](const Task& task, std::size_t, std::size_t) {
        return run_scripted(oracle_script(task.family), Context::for_task(task.prompt), task, caps).trajectory;
    };
    return evaluate(agent, tasks, 1);
}

auto serialize_paired(const PairedOutcome& p) -> std::string
{
    auto flaws = nlohmann::json::array();
    for (auto f: p.first_flaws)
        flaws.push_back(to_string(f));
    auto doc = nlohmann::json { { "schema", "reagent.paired" },     { "version", kRecordVersion },
                                { "task_id", p.task_id },           { "step", p.step },
                                { "first_correct", p.first_correct }, { "second_correct", p.second_correct },
                                { "first_flaws", flaws } };
    return doc.dump();
}

// -- trainer state -----------------------------------------------------------------

auto initial_state(const PolicyParams& params, const TrainingConfig& cfg) -> TrainerState
{
    auto state = TrainerState { .params = params, .reference = params, .adam = std::nullopt, .next_step = 0 };
    if (cfg.optimizer == OptimizerKind::Adam)
        state.adam.emplace(params.feature_dim(), params.vocab_size(), cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon);
    return state;
}

void save_trainer_state(const std::filesystem::path& dir, const TrainerState& state)
{
    std::filesystem::create_directories(dir);
    save_checkpoint(dir / "params.ckpt", state.params);
    save_checkpoint(dir / "reference.ckpt", state.reference);
    auto meta = nlohmann::json { { "schema", "reagent.trainer_state" },
                                 { "version", kRecordVersion },
                                 { "next_step", state.next_step },
                                 { "adam_steps", state.adam ? state.adam->steps() : 0 },
                                 { "adam", state.adam.has_value() } };
    if (state.adam)
    {
        meta["adam_beta1"] = state.adam->beta1();
        meta["adam_beta2"] = state.adam->beta2();
        meta["adam_epsilon"] = state.adam->epsilon();
    }
    if (state.adam)
    {
        save_checkpoint(dir / "adam_m.ckpt", PolicyParams(state.adam->first_moment()));
        save_checkpoint(dir / "adam_v.ckpt", PolicyParams(state.adam->second_moment()));
    }
    write_lines(dir / "state.json", { meta.dump() });
}

auto load_trainer_state(const std::filesystem::path& dir) -> TrainerState
{
    auto const lines = read_lines(dir / "state.json");
    if (lines.empty())
        throw DecodeError("state.json", "empty trainer state");
    auto const meta = nlohmann::json::parse(lines.front(), nullptr, false);
    if (meta.is_discarded() || meta.value("schema", "") != "reagent.trainer_state")
        throw DecodeError("state.json", "not a trainer state record");
    auto state = TrainerState { .params = load_checkpoint(dir / "params.ckpt"),
                                .reference = load_checkpoint(dir / "reference.ckpt"),
                                .adam = std::nullopt,
                                .next_step = meta.at("next_step").get<std::uint64_t>() };
    if (meta.value("adam", false))
    {
        auto& adam = state.adam.emplace(state.params.feature_dim(), state.params.vocab_size(),
                                        meta.at("adam_beta1").get<double>(), meta.at("adam_beta2").get<double>(),
                                        meta.at("adam_epsilon").get<double>());
        adam.restore(load_checkpoint(dir / "adam_m.ckpt").weights(), load_checkpoint(dir / "adam_v.ckpt").weights(),
                     meta.at("adam_steps").get<std::uint64_t>());
    }
    return state;
}

// -- Trainer -------------------------------------------------------------------------

Trainer::Trainer(Variant variant, TrainerState state, std::vector<Task> tasks, JudgeBackend* backend,
                 TrainingConfig cfg, RewardConfig rcfg, TrainOptions options):
    _variant(variant),
    _state(std::move(state)),
    _tasks(std::move(tasks)),
    _backend(backend),
    _cfg(cfg),
    _rcfg(rcfg),
    _options(std::move(options))
{
    _cfg.validate();
    _rcfg.validate();
    if (_variant == Variant::C)
        throw ConfigError("variant C does not train");
    if (_variant == Variant::Baseline)
        _rcfg.lambda = 0.0;
    if (_tasks.empty())
        throw ConfigError("training needs at least one task");
    if (uses_judge() && _backend == nullptr)
        throw ConfigError("variant " + std::string(to_string(_variant)) + " needs a judge backend");
    if ((_cfg.optimizer == OptimizerKind::Adam) != _state.adam.has_value())
        throw ConfigError("optimizer state does not match the configured optimizer");
}

auto Trainer::uses_judge() const -> bool
{
    if (_variant == Variant::U && _options.stage2_enabled)
        return true;
    return _rcfg.lambda > 0.0;
}

auto Trainer::batch_indices(std::uint64_t step) const -> std::vector<std::size_t>
{
    auto const n = _tasks.size();
    auto out = std::vector<std::size_t> {};
    auto cachedEpoch = std::uint64_t { ~0ULL };
    auto perm = std::vector<std::size_t>(n);
    for (std::size_t b = 0; b < _cfg.batch_tasks; ++b)
    {
        auto const position = step * _cfg.batch_tasks + b;
        auto const epoch = position / n;
        if (epoch != cachedEpoch)
        {
            std::iota(perm.begin(), perm.end(), std::size_t { 0 });
            auto rng = Rng(mix_seed(_cfg.seed, kOrderStream, epoch));
            for (auto i = n; i > 1; --i)
                std::swap(perm[i - 1], perm[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
            cachedEpoch = epoch;
        }
        out.push_back(perm[position % n]);
    }
    return out;
}

auto Trainer::score_task(const Task& task, const PolicyParams& sampler, const PolicyParams& reference,
                         std::uint64_t step, std::size_t slot) const -> TaskOutcome
{
    auto rng = Rng(mix_seed(_cfg.seed, kRolloutStream, step, slot));
    auto const g = _cfg.group_size;
    auto const twoStage = _variant == Variant::U && _options.stage2_enabled;
    auto const judgeForReward = _rcfg.lambda > 0.0;

    auto outcome = TaskOutcome {};
    outcome.group.task_id = task.id;

    auto addEntry = [&](Episode&& ep, const std::optional<Judgment>& judgment) {
        auto const rule = rule_reward(task, ep.trajectory, _rcfg);
        auto const model = judgment ? model_reward(*judgment) : 0.0;
        auto entry = ScoredEntry { .trajectory = std::move(ep.trajectory),
                                   .context = std::move(ep.context),
                                   .reward = combined_reward(rule, model, _rcfg),
                                   .new_logp = 0.0,
                                   .old_logp = 0.0,
                                   .ref_logp = 0.0,
                                   .advantage = 0.0 };
        entry.old_logp = log_prob(sampler, entry.context, entry.trajectory.actions).total;
        entry.new_logp = entry.old_logp;
        entry.ref_logp = &reference == &sampler ? entry.old_logp
                                                : log_prob(reference, entry.context, entry.trajectory.actions).total;
        outcome.group.entries.push_back(std::move(entry));
    };

    auto first = std::vector<Episode> {};
    auto firstJudgments = std::vector<std::optional<Judgment>> {};
    for (std::size_t i = 0; i < g; ++i)
    {
        auto ep = run_episode(sampler, Context::for_task(task.prompt), task, Stage::First, _options.caps, rng);
        auto judged = JudgeOutcome {};
        if (twoStage || judgeForReward)
            judged = try_judge(*_backend, task, ep.trajectory);
        outcome.judge_failures += judged.failed ? 1 : 0;
        firstJudgments.push_back(judged.judgment);
        first.push_back(std::move(ep));
    }

    auto second = std::vector<Episode> {};
    auto secondJudgments = std::vector<std::optional<Judgment>> {};
    if (twoStage)
    {
        for (std::size_t i = 0; i < g; ++i)
        {
            auto const critique = firstJudgments[i] ? firstJudgments[i]->critique() : std::string {};
            auto ctx = Context::refinement(task.prompt, first[i].trajectory.actions, critique, _options.critique_chars);
            auto ep = run_episode(sampler, std::move(ctx), task, Stage::Refined, _options.caps, rng);
            auto judged = JudgeOutcome {};
            if (judgeForReward)
                judged = try_judge(*_backend, task, ep.trajectory);
            outcome.judge_failures += judged.failed ? 1 : 0;
            secondJudgments.push_back(judged.judgment);
            second.push_back(std::move(ep));
        }
        if (_options.record_paired)
            for (std::size_t i = 0; i < g; ++i)
                outcome.paired.push_back(PairedOutcome {
                    .task_id = task.id,
                    .step = step,
                    .first_correct = rule_reward(task, first[i].trajectory) == 1.0,
                    .second_correct = rule_reward(task, second[i].trajectory) == 1.0,
                    .first_flaws = detect_flaws(task, first[i].trajectory),
                });
    }

    for (std::size_t i = 0; i < first.size(); ++i)
        addEntry(std::move(first[i]), judgeForReward ? firstJudgments[i] : std::nullopt);
    for (std::size_t i = 0; i < second.size(); ++i)
        addEntry(std::move(second[i]), secondJudgments[i]);

    assign_advantages(outcome.group);
    return outcome;
}

auto Trainer::sample_batch(std::uint64_t step) -> std::vector<ScoredGroup>
{
    if (_cfg.reference == ReferencePolicy::BatchStart)
        _state.reference = _state.params;
    auto const sampler = _state.params;
    auto const& reference = _cfg.reference == ReferencePolicy::BatchStart ? sampler : _state.reference;

    auto const indices = batch_indices(step);
    auto outcomes = std::vector<TaskOutcome>(indices.size());
    parallel_for(indices.size(), _options.threads, [&](std::size_t b) {
        outcomes[b] = score_task(_tasks[indices[b]], sampler, reference, step, b);
    });

    auto groups = std::vector<ScoredGroup> {};
    _lastBatchFailures = 0;
    for (auto& o: outcomes)
    {
        _lastBatchFailures += o.judge_failures;
        for (auto& p: o.paired)
        {
            if (_options.on_paired)
                _options.on_paired(p);
            _paired.push_back(std::move(p));
        }
        groups.push_back(std::move(o.group));
    }
    _judgeFailures += _lastBatchFailures;
    return groups;
}

auto Trainer::step() -> MetricsRecord
{
    auto const stepIndex = _state.next_step;
    auto const groups = sample_batch(stepIndex);

    auto record = MetricsRecord {};
    record.step = stepIndex;
    record.judge_failures = _lastBatchFailures;

    auto entries = std::size_t { 0 };
    for (auto const& g: groups)
        for (auto const& e: g.entries)
        {
            record.mean_reward += e.reward.combined;
            record.mean_rule += e.reward.rule;
            record.mean_model += e.reward.model;
            ++entries;
        }
    record.mean_reward /= static_cast<double>(entries);
    record.mean_rule /= static_cast<double>(entries);
    record.mean_model /= static_cast<double>(entries);

    auto minibatches = std::size_t { 0 };
    auto const all = std::span<const ScoredGroup>(groups);
    for (std::size_t start = 0; start < all.size(); start += _cfg.minibatch_tasks)
    {
        auto const chunk = all.subspan(start, std::min(_cfg.minibatch_tasks, all.size() - start));
        auto result = objective_and_gradient(_state.params, chunk, _cfg);
        record.objective += result.objective;
        record.mean_kl += result.mean_kl;
        record.clip_fraction += result.clip_fraction;
        record.grad_norm += result.gradient.norm();
        if (_state.adam)
            _state.adam->step(_state.params, result.gradient, _cfg.learning_rate);
        else
            _state.params = apply_update(_state.params, result.gradient, _cfg.learning_rate);
        ++minibatches;
    }
    auto const m = static_cast<double>(minibatches);
    record.objective /= m;
    record.mean_kl /= m;
    record.clip_fraction /= m;
    record.grad_norm /= m;

    ++_state.next_step;
    if (_options.on_metrics)
        _options.on_metrics(record);
    return record;
}

namespace
{

auto run_trainer(Variant variant, const PolicyParams& params, std::span<const Task> tasks, JudgeBackend* backend,
                 const TrainingConfig& cfg, const RewardConfig& rcfg, const TrainOptions& options) -> VariantRunReport
{
    auto trainer = Trainer(variant, initial_state(params, cfg), std::vector<Task>(tasks.begin(), tasks.end()), backend,
                           cfg, rcfg, options);
    auto report = VariantRunReport {};
    report.variant = variant;
    report.checksum_before = params.checksum();
    for (std::size_t s = 0; s < options.steps; ++s)
        report.metrics.push_back(trainer.step());
    report.final_params = trainer.state().params;
    report.checksum_after = report.final_params->checksum();
    report.paired = trainer.paired();
    report.judge_failures = trainer.judge_failures();
    return report;
}

} // namespace

auto run_reagent_r(const PolicyParams& params, std::span<const Task> tasks, JudgeBackend& backend,
                   const TrainingConfig& cfg, const RewardConfig& rcfg, const TrainOptions& options)
    -> VariantRunReport
{
    return run_trainer(Variant::R, params, tasks, &backend, cfg, rcfg, options);
}

auto run_baseline(const PolicyParams& params, std::span<const Task> tasks, const TrainingConfig& cfg,
                  const TrainOptions& options) -> VariantRunReport
{
    return run_trainer(Variant::Baseline, params, tasks, nullptr, cfg, RewardConfig { .lambda = 0.0 }, options);
}

auto run_reagent_u(const PolicyParams& params, std::span<const Task> tasks, JudgeBackend& backend,
                   const TrainingConfig& cfg, const RewardConfig& rcfg, const TrainOptions& options)
    -> VariantRunReport
{
    return run_trainer(Variant::U, params, tasks, &backend, cfg, rcfg, options);
}

// -- Reagent-C ---------------------------------------------------------------------

auto truncate_trajectory(const Trajectory& traj, Rng& rng) -> Trajectory
{
    if (traj.actions.empty())
        return traj;
    auto const cut = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(traj.actions.size()) - 1));
    auto out = traj;
    out.actions.resize(cut);
    out.old_logp.resize(cut);
    out.final_answer.clear();
    auto executed = std::size_t { 0 };
    for (auto const& f: decode_frames(out.actions))
        executed += f.kind == Frame::Kind::Call ? 1 : 0;
    out.tool_calls.resize(std::min(executed, traj.tool_calls.size()));
    return out;
}

auto run_reagent_c(const FrozenPolicy& frozen, std::span<const Task> tasks, JudgeBackend& backend,
                   const RefineOptions& options) -> VariantRunReport
{
    auto const& params = frozen.params();
    auto report = VariantRunReport {};
    report.variant = Variant::C;
    report.checksum_before = params.checksum();

    struct Slot
    {
        std::optional<PairedOutcome> paired;
        bool failed = false;
    };
    auto slots = std::vector<Slot>(tasks.size());

    parallel_for(tasks.size(), options.threads, [&](std::size_t j) {
        auto const& task = tasks[j];
        auto rng = Rng(mix_seed(options.seed, kRefineStream, j));
        auto first = run_episode(params, Context::for_task(task.prompt), task, Stage::First, options.caps, rng);
        auto attempt = first.trajectory;
        if (options.inject_flaw_rate > 0.0 && rng.uniform() < options.inject_flaw_rate)
            attempt = truncate_trajectory(attempt, rng);

        auto const judged = try_judge(backend, task, attempt);
        if (!judged.judgment)
        {
            slots[j].failed = true;
            return;
        }
        auto ctx = Context::refinement(task.prompt, attempt.actions, judged.judgment->critique(), options.critique_chars);
        auto second = run_episode(params, std::move(ctx), task, Stage::Refined, options.caps, rng);
        slots[j].paired = PairedOutcome {
            .task_id = task.id,
            .step = 0,
            .first_correct = rule_reward(task, attempt) == 1.0,
            .second_correct = rule_reward(task, second.trajectory) == 1.0,
            .first_flaws = detect_flaws(task, attempt),
        };
    });

    auto firstHits = 0.0;
    auto secondHits = 0.0;
    auto firstByFamily = std::vector<FamilyStats> {};
    for (auto f: kAllFamilies)
        firstByFamily.push_back(FamilyStats { .family = f, .tasks = 0, .pass_at_1 = 0.0, .pass_at_k = 0.0 });
    for (std::size_t j = 0; j < slots.size(); ++j)
    {
        if (slots[j].failed)
        {
            ++report.skipped_tasks;
            ++report.judge_failures;
            continue;
        }
        auto const& p = *slots[j].paired;
        firstHits += p.first_correct;
        secondHits += p.second_correct;
        auto& row = firstByFamily[static_cast<std::size_t>(tasks[j].family)];
        ++row.tasks;
        row.pass_at_1 += p.second_correct; // headline metrics use the refined attempt
        row.pass_at_k += p.second_correct;
        report.paired.push_back(p);
    }
    auto const judged = static_cast<double>(report.paired.size());
    if (judged > 0)
    {
        report.first_pass_rate = firstHits / judged;
        report.second_pass_rate = secondHits / judged;
    }
    report.eval = aggregate(std::move(firstByFamily), 1);
    report.checksum_after = params.checksum();
    return report;
}

} // namespace reagent
