// SPDX-License-Identifier: Apache-2.0
// reagent: command line front end for task generation, training, refinement,
// judging, evaluation, the lambda sweep and run reports.
//
// Exit status: 0 ok, 1 configuration error, 2 runtime error.

#include <reagent/config.hpp>
#include <reagent/experiments.hpp>
#include <reagent/records.hpp>

#include <CLI11.hpp>
#include <fmt/format.h>

#include <iostream>
#include <map>

using namespace reagent;

namespace
{

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct CommonOptions
{
    std::string config_path;
    std::vector<std::string> overrides;
    std::string output_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
};

void add_common(CLI::App* cmd, CommonOptions& opts)
{
    cmd->add_option("-c,--config", opts.config_path, "RunConfig document")->check(CLI::ExistingFile);
    cmd->add_option("-s,--set", opts.overrides, "override a config key (key=value), repeatable");
    cmd->add_option("-o,--output", opts.output_dir, "output directory");
    cmd->add_option("--seed", opts.seed, "run seed");
    cmd->add_option("-j,--threads", opts.threads, "rollout threads");
}

auto resolve_config(const CommonOptions& opts) -> RunConfig
{
    auto cfg = opts.config_path.empty() ? RunConfig {} : load_config(opts.config_path);
    for (auto const& kv: opts.overrides)
    {
        auto const eq = kv.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (!opts.output_dir.empty())
        cfg.output_dir = opts.output_dir;
    if (opts.seed)
        cfg.seed = *opts.seed;
    if (opts.threads)
        cfg.threads = *opts.threads;
    apply_env_overrides(cfg);
    return cfg;
}

template <typename T>
auto parse_list(const std::string& text, std::string_view what) -> std::vector<T>
{
    auto out = std::vector<T> {};
    auto cfg = RunConfig {};
    auto rest = std::string_view(text);
    while (!rest.empty())
    {
        auto const comma = rest.find(',');
        auto const item = std::string(rest.substr(0, comma));
        try
        {
            if constexpr (std::is_same_v<T, double>)
            {
                set_config_value(cfg, "reward.lambda", item); // parses and checks finiteness
                out.push_back(cfg.reward.lambda);
            }
            else
                out.push_back(static_cast<T>(std::stoull(item)));
        }
        catch (const std::logic_error&)
        {
            throw ConfigError(fmt::format("{}: cannot parse '{}'", what, item));
        }
        rest = comma == std::string_view::npos ? std::string_view {} : rest.substr(comma + 1);
    }
    if (out.empty())
        throw ConfigError(fmt::format("{}: empty list", what));
    return out;
}

void print_eval(const EvalTable& table)
{
    fmt::print("{:<14} {:>6} {:>8} {:>8}\n", "family", "tasks", "pass@1", fmt::format("pass@{}", table.k));
    for (auto const& f: table.families)
        fmt::print("{:<14} {:>6} {:>8.3f} {:>8.3f}\n", to_string(f.family), f.tasks, f.pass_at_1, f.pass_at_k);
    fmt::print("{:<14} {:>6} {:>8.3f} {:>8.3f}\n", "all", "", table.pass_at_1, table.pass_at_k);
}

} // namespace

auto main(int argc, char** argv) -> int
{
    auto app = CLI::App { "Reagent toy GRPO trainer with critique and judge-reward variants" };
    app.require_subcommand(1);

    // gen-tasks
    auto genFamilies = std::string { "arithmetic,lookup,file_extract,multi_hop" };
    auto genCount = std::size_t { 50 };
    auto genSeed = std::uint64_t { 1 };
    auto genOut = std::string {};
    auto* gen = app.add_subcommand("gen-tasks", "write a task corpus (one record per line)");
    gen->add_option("--families", genFamilies, "comma separated task families");
    gen->add_option("-n,--count", genCount, "tasks per family");
    gen->add_option("--seed", genSeed, "corpus seed");
    gen->add_option("--out", genOut, "output file")->required();

    // train
    auto trainOpts = CommonOptions {};
    auto trainVariant = std::string { "r" };
    auto trainSteps = std::optional<std::size_t> {};
    auto trainLambda = std::optional<double> {};
    auto trainResume = false;
    auto* train = app.add_subcommand("train", "train a policy with GRPO");
    add_common(train, trainOpts);
    train->add_option("--variant", trainVariant, "r, u or baseline")
        ->check(CLI::IsMember({ "r", "u", "baseline" }));
    train->add_option("--steps", trainSteps, "optimizer steps");
    train->add_option("--lambda", trainLambda, "judge reward weight");
    train->add_flag("--resume", trainResume, "continue from the run's saved state");

    // refine
    auto refineOpts = CommonOptions {};
    auto refineCheckpoint = std::string {};
    auto* refine = app.add_subcommand("refine", "critique-conditioned second attempts with a frozen policy");
    add_common(refine, refineOpts);
    refine->add_option("--checkpoint", refineCheckpoint, "policy checkpoint")->check(CLI::ExistingFile);

    // judge
    auto judgeOpts = CommonOptions {};
    auto judgeTasks = std::string {};
    auto judgeTrajectories = std::string {};
    auto judgeOut = std::string {};
    auto* judgeCmd = app.add_subcommand("judge", "score a trajectory file");
    add_common(judgeCmd, judgeOpts);
    judgeCmd->add_option("--tasks", judgeTasks, "task corpus")->required()->check(CLI::ExistingFile);
    judgeCmd->add_option("--trajectories", judgeTrajectories, "trajectory records")
        ->required()
        ->check(CLI::ExistingFile);
    judgeCmd->add_option("--out", judgeOut, "judgment records (stdout when omitted)");

    // eval
    auto evalOpts = CommonOptions {};
    auto evalCheckpoint = std::string {};
    auto evalOracle = false;
    auto* evalCmd = app.add_subcommand("eval", "single-pass evaluation");
    add_common(evalCmd, evalOpts);
    evalCmd->add_option("--checkpoint", evalCheckpoint, "policy checkpoint")->check(CLI::ExistingFile);
    evalCmd->add_flag("--oracle", evalOracle, "evaluate the scripted oracle agent instead");

    // sweep-lambda
    auto sweepOpts = CommonOptions {};
    auto sweepValues = std::string { "0,0.1,0.2,0.3,0.4,0.5" };
    auto sweepSeeds = std::string { "0,1,2,3,4" };
    auto* sweep = app.add_subcommand("sweep-lambda", "Reagent-R over a grid of lambda values and seeds");
    add_common(sweep, sweepOpts);
    sweep->add_option("--values", sweepValues, "comma separated lambda values");
    sweep->add_option("--seeds", sweepSeeds, "comma separated seeds");

    // report
    auto reportDir = std::string {};
    auto* report = app.add_subcommand("report", "summarize a run directory");
    report->add_option("dir", reportDir, "run directory")->required()->check(CLI::ExistingDirectory);

    try
    {
        app.parse(argc, argv);
    }
    catch (const CLI::CallForHelp& e)
    {
        return app.exit(e);
    }
    catch (const CLI::ParseError& e)
    {
        app.exit(e);
        return kExitConfig;
    }

    try
    {
        if (gen->parsed())
        {
            auto cfg = RunConfig {};
            set_config_value(cfg, "tasks.train_families", genFamilies);
            auto tasks = std::vector<Task> {};
            for (auto f: cfg.train_families)
            {
                auto part = generate_tasks(genSeed, f, genCount);
                tasks.insert(tasks.end(), part.begin(), part.end());
            }
            save_tasks(genOut, tasks);
            fmt::print("wrote {} tasks to {}\n", tasks.size(), genOut);
        }
        else if (train->parsed())
        {
            auto cfg = resolve_config(trainOpts);
            cfg.variant = *parse_variant(trainVariant);
            if (trainSteps)
                cfg.steps = *trainSteps;
            if (trainLambda)
                cfg.reward.lambda = *trainLambda;
            cfg.validate();
            auto const summary = run_training(cfg, trainResume);
            if (trainResume && summary.resumed_from > 0)
                fmt::print("resumed at step {}\n", summary.resumed_from);
            if (!summary.metrics.empty())
            {
                auto const& last = summary.metrics.back();
                fmt::print("step {}: reward {:.4f} rule {:.4f} model {:.4f} KL {:.4f}\n", last.step,
                           last.mean_reward, last.mean_rule, last.mean_model, last.mean_kl);
            }
            print_eval(summary.eval);
            fmt::print("outputs in {}\n", cfg.output_dir.string());
        }
        else if (refine->parsed())
        {
            auto cfg = resolve_config(refineOpts);
            cfg.variant = Variant::C;
            if (!refineCheckpoint.empty())
                cfg.init_checkpoint = refineCheckpoint;
            cfg.validate();
            auto const r = run_refinement(cfg);
            fmt::print("judged {} tasks ({} skipped)\n", r.paired.size(), r.skipped_tasks);
            fmt::print("pass@1 first attempt {:.3f}, after critique {:.3f}\n", r.first_pass_rate,
                       r.second_pass_rate);
            fmt::print("parameters unchanged: {}\n", r.checksum_before == r.checksum_after ? "yes" : "NO");
        }
        else if (judgeCmd->parsed())
        {
            auto cfg = resolve_config(judgeOpts);
            cfg.validate();
            auto backend = make_judge_backend(cfg);
            auto byId = std::map<std::string, Task> {};
            for (auto& t: load_tasks(judgeTasks))
                byId.emplace(t.id, std::move(t));
            auto lines = std::vector<std::string> {};
            for (auto const& traj: load_trajectories(judgeTrajectories))
            {
                auto const it = byId.find(traj.task_id);
                if (it == byId.end())
                    throw Error("trajectory refers to unknown task " + traj.task_id);
                lines.push_back(serialize_judgment(judge(*backend, it->second, traj)));
            }
            if (judgeOut.empty())
                for (auto const& l: lines)
                    std::cout << l << '\n';
            else
                write_lines(judgeOut, lines);
        }
        else if (evalCmd->parsed())
        {
            auto cfg = resolve_config(evalOpts);
            cfg.validate();
            auto const sets = build_task_sets(cfg);
            if (evalOracle)
                print_eval(evaluate_oracle_agent(sets.eval, cfg.eval.max_steps));
            else
            {
                auto const params = evalCheckpoint.empty() ? initial_params(cfg) : load_checkpoint(evalCheckpoint);
                print_eval(evaluate(params, sets.eval, eval_config(cfg)));
            }
        }
        else if (sweep->parsed())
        {
            auto cfg = resolve_config(sweepOpts);
            auto const lambdas = parse_list<double>(sweepValues, "--values");
            auto const seeds = parse_list<std::uint64_t>(sweepSeeds, "--seeds");
            auto const rows = run_lambda_sweep(cfg, lambdas, seeds);
            fmt::print("{}", format_sweep_table(rows));
        }
        else if (report->parsed())
        {
            fmt::print("{}", report_run(reportDir));
        }
    }
    catch (const ConfigError& e)
    {
        fmt::print(stderr, "config error: {}\n", e.what());
        return kExitConfig;
    }
    catch (const std::exception& e)
    {
        fmt::print(stderr, "error: {}\n", e.what());
        return kExitRuntime;
    }
    return 0;
}
