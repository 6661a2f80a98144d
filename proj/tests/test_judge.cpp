// SPDX-License-Identifier: Apache-2.0
#include "judgment_corpus.hpp"
#include "support.hpp"

#include <reagent/judge.hpp>

#include <doctest.h>

#include <optional>

using namespace reagent;
using namespace reagent::testing;

namespace
{

auto task_and_episode(TaskFamily family, std::vector<Symbol> script, std::uint64_t seed = 7)
    -> std::pair<Task, Trajectory>
{
    auto const task = generate_task(seed, family);
    auto ep = run_scripted(script, Context::for_task(task.prompt), task,
                           EpisodeCaps { .max_steps = kTrainMaxSteps, .max_len = 48, .temperature = 1.0 });
    return { task, ep.trajectory };
}

auto has(const std::vector<FlawCode>& flaws, FlawCode code) -> bool
{
    return std::ranges::find(flaws, code) != flaws.end();
}

} // namespace

TEST_CASE("judgment parser corpus")
{
    auto const corpus = parse_corpus();
    REQUIRE(corpus.size() >= 25);
    for (auto const& c: corpus)
    {
        CAPTURE(c.name);
        if (c.score)
        {
            auto const j = parse_judgment(c.raw);
            CHECK(j.score() == *c.score);
            CHECK(!j.think().empty());
            CHECK(!j.critique().empty());
            continue;
        }
        try
        {
            parse_judgment(c.raw);
            FAIL("accepted malformed judgment");
        }
        catch (const JudgmentParseError& e)
        {
            CHECK(e.kind() == *c.error);
            if (!c.detail.empty())
                CHECK(e.detail() == c.detail);
        }
    }
}

TEST_CASE("minimal judgment fields")
{
    auto const j = parse_judgment("<think>a</think><critique>b</critique><score>0.75</score>");
    CHECK(j == Judgment("a", "b", 0.75));
}

TEST_CASE("render then parse is the identity")
{
    auto rng = Rng(19);
    for (auto i = 0; i < 1000; ++i)
    {
        auto const words = rng.uniform_int(1, 6);
        auto think = random_word(rng, 3);
        for (auto w = 1; w < words; ++w)
            think += (rng.uniform() < 0.3 ? "\n" : " ") + random_word(rng, 4);
        auto const critique = random_word(rng, 5) + " " + random_word(rng, 2) + ".";
        auto const score = static_cast<double>(rng.uniform_int(0, 1'000'000)) / 1e6;
        auto const j = Judgment(think, critique, score);
        CHECK(parse_judgment(render_judgment(j)) == j);
    }
    CHECK(format_score(1.0) == "1");
    CHECK(format_score(0.0) == "0");
    CHECK(format_score(0.25) == "0.25");
}

TEST_CASE("oracle judge on a clean trajectory")
{
    for (auto f: kAllFamilies)
    {
        auto const [task, traj] = task_and_episode(f, oracle_script(f));
        CHECK(detect_flaws(task, traj).empty());
        auto const j = parse_judgment(oracle_judge(task, traj));
        CHECK(j.score() == 1.0);
        CHECK(j.critique() == "No flaws detected in reasoning or tool use.");
        for (auto code: kAllFlaws)
            CHECK(j.think().find(std::string(to_string(code))) != std::string::npos);
    }
}

TEST_CASE("oracle judge flags repeated calls")
{
    using enum Symbol;
    auto const [task, traj] =
        task_and_episode(TaskFamily::Lookup, { ToolSearch, ArgQuery, ToolSearch, ArgQuery, Answer, ArgObservation });
    auto const flaws = detect_flaws(task, traj);
    CHECK(has(flaws, FlawCode::RepeatedCall));
    auto const j = parse_judgment(oracle_judge(task, traj));
    CHECK(j.critique().find(critique_template(FlawCode::RepeatedCall, task)) != std::string::npos);
    CHECK(j.score() <= 0.8);
}

TEST_CASE("oracle judge flags a missing answer")
{
    using enum Symbol;
    auto const [task, traj] = task_and_episode(TaskFamily::Lookup, { ToolSearch, ArgQuery, End });
    CHECK(has(detect_flaws(task, traj), FlawCode::NoAnswer));
    CHECK(parse_judgment(oracle_judge(task, traj)).score() <= 0.6);
}

TEST_CASE("each detector fires on its flaw")
{
    using enum Symbol;
    SUBCASE("missing required tool")
    {
        auto const [task, traj] = task_and_episode(TaskFamily::MultiHop, { ToolSearch, ArgQuery, Answer, ArgObservation });
        CHECK(has(detect_flaws(task, traj), FlawCode::MissingRequiredTool));
    }
    SUBCASE("unverified answer")
    {
        auto const [task, traj] = task_and_episode(TaskFamily::Lookup, { ToolSearch, ArgQuery, Answer, ArgGuess });
        auto const flaws = detect_flaws(task, traj);
        CHECK(has(flaws, FlawCode::UnverifiedAnswer));
        CHECK(!has(flaws, FlawCode::NoAnswer));
    }
    SUBCASE("malformed call")
    {
        auto const [task, traj] = task_and_episode(TaskFamily::Lookup, { ToolSearch, End });
        CHECK(has(detect_flaws(task, traj), FlawCode::MalformedCall));
    }
    SUBCASE("hallucinated resource")
    {
        auto const [task, traj] = task_and_episode(TaskFamily::FileExtract, { ToolFileReader, ArgGuess, End });
        CHECK(has(detect_flaws(task, traj), FlawCode::HallucinatedResource));
    }
    SUBCASE("over budget")
    {
        auto script = std::vector<Symbol> {};
        for (auto i = 0; i < 15; ++i)
            script.insert(script.end(), { ToolSearch, ArgQuery });
        auto const [task, traj] = task_and_episode(TaskFamily::Lookup, script);
        CHECK(has(detect_flaws(task, traj), FlawCode::OverBudget));
    }
}

TEST_CASE("oracle score is monotone in the flaw set")
{
    auto rng = Rng(41);
    for (auto i = 0; i < 2000; ++i)
    {
        auto base = std::vector<FlawCode> {};
        for (auto code: kAllFlaws)
            if (rng.uniform() < 0.4)
                base.push_back(code);
        auto extended = base;
        extended.push_back(kAllFlaws[static_cast<std::size_t>(rng.uniform_int(0, kAllFlaws.size() - 1))]);
        CHECK(oracle_score(extended) <= oracle_score(base));
        CHECK(oracle_score(base) >= 0.0);
        CHECK(oracle_score(base) <= 1.0);
    }

    // Adding a flawed call to a clean trajectory never raises the score.
    using enum Symbol;
    for (auto f: kAllFamilies)
    {
        auto script = oracle_script(f);
        auto const [task, clean] = task_and_episode(f, script);
        script.insert(script.begin(), { ToolImageDescriptor, ArgGuess });
        auto const [_, flawed] = task_and_episode(f, script);
        CHECK(oracle_score(detect_flaws(task, flawed)) < oracle_score(detect_flaws(task, clean)));
    }
}

TEST_CASE("oracle judge never reads the ground truth")
{
    auto rng = Rng(2);
    auto const params = random_params(rng, 64, kVocabSize, 1.5);
    for (auto f: kAllFamilies)
        for (std::uint64_t seed = 0; seed < 20; ++seed)
        {
            auto task = generate_task(seed, f);
            auto sampler = Rng(seed);
            auto const ep = run_episode(params, Context::for_task(task.prompt), task, Stage::First, EpisodeCaps {}, sampler);
            auto const with = oracle_judge(task, ep.trajectory);
            task.ground_truth.clear();
            CHECK(oracle_judge(task, ep.trajectory) == with);
            CHECK_NOTHROW(parse_judgment(with));
        }
}

TEST_CASE("oracle backend")
{
    auto backend = OracleJudge {};
    auto const [task, traj] = task_and_episode(TaskFamily::Arithmetic, oracle_script(TaskFamily::Arithmetic));
    CHECK(judge(backend, task, traj).score() == 1.0);

    auto strict = OracleJudge(PenaltyTable { .repeated_call = 0.2,
                                             .missing_required_tool = 0.3,
                                             .unverified_answer = 0.15,
                                             .malformed_call = 0.15,
                                             .hallucinated_resource = 0.15,
                                             .over_budget = 0.15,
                                             .no_answer = 1.0 });
    auto const [t2, noAnswer] = task_and_episode(TaskFamily::Arithmetic, { Symbol::End });
    CHECK(judge(strict, t2, noAnswer).score() == 0.0);
}

TEST_CASE("rendered trajectories show calls and answers")
{
    using enum Symbol;
    auto const [task, traj] = task_and_episode(TaskFamily::Lookup, { ArgGuess, ToolSearch, ArgQuery, Answer, ArgObservation });
    auto const text = render_trajectory(task.prompt, traj);
    CHECK(text.find("task: " + task.prompt) != std::string::npos);
    CHECK(text.find("malformed call [$guess]") != std::string::npos);
    CHECK(text.find("Search(\"" + query_subject(task.prompt) + "\")") != std::string::npos);
    CHECK(text.find("final answer: " + task.ground_truth) != std::string::npos);
}
