// SPDX-License-Identifier: Apache-2.0
#include <reagent/environment.hpp>
#include <reagent/random.hpp>

#include <array>
#include <cctype>
#include <fmt/format.h>
#include <limits>
#include <stdexcept>

namespace reagent
{

namespace
{

constexpr std::array<std::string_view, 16> kSyllables = {
    "ka", "lo", "mir", "ven", "tor", "sa", "qui", "dro", "bel", "zan", "ri", "mo", "nav", "pel", "sho", "gru",
};
constexpr std::array<std::string_view, 10> kValueWords = {
    "amber", "cobalt", "crimson", "ivory", "jade", "onyx", "opal", "saffron", "teal", "umber",
};
constexpr std::array<std::string_view, 6> kCaptionSubjects = {
    "a red kite", "two herons", "a stone bridge", "a lighthouse", "a field of rye", "a market stall",
};

auto make_name(Rng& rng) -> std::string
{
    auto name = std::string {};
    auto const parts = rng.uniform_int(2, 3);
    for (auto i = 0; i < parts; ++i)
        name += kSyllables.at(static_cast<std::size_t>(rng.uniform_int(0, kSyllables.size() - 1)));
    return name;
}

auto make_value(Rng& rng) -> std::string
{
    auto const word = kValueWords.at(static_cast<std::size_t>(rng.uniform_int(0, kValueWords.size() - 1)));
    return fmt::format("{}-{}", word, rng.uniform_int(100, 999));
}

/// Recursive-descent evaluator: expr := term (('+'|'-') term)*, term := factor (('*'|'/') factor)*.
class ArithmeticParser
{
  public:
    explicit ArithmeticParser(std::string_view text): _text(text) {}

    auto parse() -> std::int64_t
    {
        skip();
        if (_pos == _text.size())
            throw std::invalid_argument("empty expression");
        auto const value = expr();
        skip();
        if (_pos != _text.size())
            throw std::invalid_argument(fmt::format("unexpected character '{}'", _text[_pos]));
        return value;
    }

  private:
    void skip()
    {
        while (_pos < _text.size() && std::isspace(static_cast<unsigned char>(_text[_pos])))
            ++_pos;
    }

    auto peek() -> char
    {
        skip();
        return _pos < _text.size() ? _text[_pos] : '\0';
    }

    auto expr() -> std::int64_t
    {
        auto value = term();
        for (auto c = peek(); c == '+' || c == '-'; c = peek())
        {
            ++_pos;
            auto const rhs = term();
            auto const overflow = c == '+' ? __builtin_add_overflow(value, rhs, &value)
                                           : __builtin_sub_overflow(value, rhs, &value);
            if (overflow)
                throw std::invalid_argument("integer overflow");
        }
        return value;
    }

    auto term() -> std::int64_t
    {
        auto value = factor();
        for (auto c = peek(); c == '*' || c == '/'; c = peek())
        {
            ++_pos;
            auto const rhs = factor();
            if (c == '*')
            {
                if (__builtin_mul_overflow(value, rhs, &value))
                    throw std::invalid_argument("integer overflow");
            }
            else
            {
                if (rhs == 0)
                    throw std::invalid_argument("division by zero");
                if (value % rhs != 0)
                    throw std::invalid_argument("inexact division");
                value /= rhs;
            }
        }
        return value;
    }

    auto factor() -> std::int64_t
    {
        auto const c = peek();
        if (c == '-')
        {
            ++_pos;
            auto const v = factor();
            if (v == std::numeric_limits<std::int64_t>::min())
                throw std::invalid_argument("integer overflow");
            return -v;
        }
        if (c == '(')
        {
            ++_pos;
            auto const v = expr();
            if (peek() != ')')
                throw std::invalid_argument("missing ')'");
            ++_pos;
            return v;
        }
        if (!std::isdigit(static_cast<unsigned char>(c)))
        {
            if (c == '\0')
                throw std::invalid_argument("unexpected end of expression");
            throw std::invalid_argument(fmt::format("unexpected character '{}'", c));
        }
        auto value = std::int64_t { 0 };
        while (_pos < _text.size() && std::isdigit(static_cast<unsigned char>(_text[_pos])))
        {
            if (__builtin_mul_overflow(value, 10, &value)
                || __builtin_add_overflow(value, _text[_pos] - '0', &value))
                throw std::invalid_argument("integer overflow");
            ++_pos;
        }
        return value;
    }

    std::string_view _text;
    std::size_t _pos = 0;
};

auto strip_url_prefix(std::string_view text) -> std::string_view
{
    return text.starts_with("url:") ? text.substr(4) : text;
}

auto lookup(const std::map<std::string, std::string>& table, std::string_view key) -> std::string
{
    auto const it = table.find(std::string(key));
    return it == table.end() ? std::string(kNoResults) : it->second;
}

} // namespace

auto build_knowledge_base(std::uint64_t env_seed) -> KnowledgeBase
{
    auto rng = Rng(env_seed);
    auto kb = KnowledgeBase {};

    auto const a = rng.uniform_int(2, 20);
    auto const b = rng.uniform_int(2, 20);
    auto const c = rng.uniform_int(1, 30);
    switch (rng.uniform_int(0, 2))
    {
        case 0:
            kb.expression = fmt::format("{}*{}+{}", a, b, c);
            kb.expression_value = std::to_string(a * b + c);
            break;
        case 1:
            kb.expression = fmt::format("{}+{}*{}", c, a, b);
            kb.expression_value = std::to_string(c + a * b);
            break;
        default:
            kb.expression = fmt::format("{}*{}-{}", a, b, c);
            kb.expression_value = std::to_string(a * b - c);
            break;
    }

    kb.lookup_key = make_name(rng);
    kb.search_index[kb.lookup_key] = make_value(rng);

    kb.topic = make_name(rng);
    while (kb.topic == kb.lookup_key)
        kb.topic = make_name(rng);
    auto const url = fmt::format("www.{}.org/{}", kb.topic, rng.uniform_int(1, 99));
    kb.search_index[kb.topic] = "url:" + url;
    kb.pages[url] = make_value(rng);

    kb.file_name = fmt::format("{}-{}.txt", make_name(rng), rng.uniform_int(1, 99));
    kb.files[kb.file_name] = make_value(rng);

    // Distractors.
    for (auto i = 0; i < 3; ++i)
    {
        auto key = make_name(rng);
        if (!kb.search_index.contains(key))
            kb.search_index[key] = make_value(rng);
        kb.pages[fmt::format("www.{}.com/{}", make_name(rng), i)] = make_value(rng);
        kb.files[fmt::format("{}-{}.csv", make_name(rng), i)] = make_value(rng);
    }
    for (auto i = 0; i < 2; ++i)
    {
        auto const subject = kCaptionSubjects.at(static_cast<std::size_t>(rng.uniform_int(0, kCaptionSubjects.size() - 1)));
        kb.images[fmt::format("image-{}.png", rng.uniform_int(1, 999))] = fmt::format("a photo of {}", subject);
        kb.audio[fmt::format("clip-{}.mp3", rng.uniform_int(1, 999))] = fmt::format("the speaker mentions {}", make_value(rng));
    }
    return kb;
}

auto evaluate_arithmetic(std::string_view expression) -> std::int64_t
{
    return ArithmeticParser(expression).parse();
}

auto generate_task(std::uint64_t seed, TaskFamily family) -> Task
{
    auto task = Task {};
    task.family = family;
    task.env_seed = mix_seed(seed, static_cast<std::uint64_t>(family) + 1);
    task.id = fmt::format("{}-{}", to_string(family), seed);
    auto const kb = build_knowledge_base(task.env_seed);
    switch (family)
    {
        case TaskFamily::Arithmetic:
            task.prompt = "compute " + kb.expression;
            task.ground_truth = kb.expression_value;
            break;
        case TaskFamily::Lookup:
            task.prompt = "lookup " + kb.lookup_key;
            task.ground_truth = kb.search_index.at(kb.lookup_key);
            break;
        case TaskFamily::FileExtract:
            task.prompt = "read " + kb.file_name;
            task.ground_truth = kb.files.at(kb.file_name);
            break;
        case TaskFamily::MultiHop:
            task.prompt = "trace " + kb.topic;
            task.ground_truth = kb.pages.at(std::string(strip_url_prefix(kb.search_index.at(kb.topic))));
            break;
    }
    task.ground_truth = normalize_answer(task.ground_truth);
    return task;
}

auto generate_tasks(std::uint64_t base_seed, TaskFamily family, std::size_t count) -> std::vector<Task>
{
    auto tasks = std::vector<Task> {};
    tasks.reserve(count);
    for (std::size_t i = 0; i < count; ++i)
        tasks.push_back(generate_task(base_seed * 100'000 + i, family));
    return tasks;
}

auto query_subject(std::string_view prompt) -> std::string
{
    auto const space = prompt.find(' ');
    return space == std::string_view::npos ? std::string {} : std::string(prompt.substr(space + 1));
}

auto required_tools(TaskFamily family) -> std::vector<Tool>
{
    switch (family)
    {
        case TaskFamily::Arithmetic: return { Tool::PythonCode };
        case TaskFamily::Lookup: return { Tool::Search };
        case TaskFamily::FileExtract: return { Tool::FileReader };
        case TaskFamily::MultiHop: return { Tool::Search, Tool::WebBrowse };
    }
    return {};
}

EnvState::EnvState(Task task, std::size_t max_steps):
    _task(std::move(task)), _kb(build_knowledge_base(_task.env_seed)), _maxSteps(max_steps), _remaining(max_steps)
{
}

auto execute_tool(EnvState& state, ToolCall call) -> std::string
{
    if (state._remaining == 0)
        throw BudgetExhausted();

    auto const& kb = state._kb;
    auto observation = std::string {};
    switch (call.tool)
    {
        case Tool::Search: observation = lookup(kb.search_index, call.args); break;
        case Tool::WebBrowse: observation = lookup(kb.pages, strip_url_prefix(call.args)); break;
        case Tool::FileReader: observation = lookup(kb.files, call.args); break;
        case Tool::ImageDescriptor: observation = lookup(kb.images, call.args); break;
        case Tool::AudioConverter: observation = lookup(kb.audio, call.args); break;
        case Tool::PythonCode:
            try
            {
                observation = std::to_string(evaluate_arithmetic(call.args));
            }
            catch (const std::invalid_argument& e)
            {
                observation = fmt::format("error: {}", e.what());
            }
            break;
    }

    --state._remaining;
    call.observation = observation;
    state._transcript.push_back(std::move(call));
    return observation;
}

// -- grammar -------------------------------------------------------------------

auto FrameDecoder::finish(Frame::Kind kind) -> Frame
{
    auto frame = Frame { .kind = kind, .tool = _tool, .arg = _arg, .begin = _begin, .end = _pos };
    _state = State::Idle;
    return frame;
}

auto FrameDecoder::push(Symbol s) -> std::optional<Frame>
{
    if (_state == State::Idle)
        _begin = _pos;
    ++_pos;

    switch (_state)
    {
        case State::Idle:
            if (is_tool_symbol(s))
            {
                _tool = tool_of(s);
                _state = State::CallTool;
            }
            else if (s == Symbol::Answer)
                _state = State::AnswerOpen;
            else if (s == Symbol::End)
                return finish(Frame::Kind::Stop);
            else
                return finish(Frame::Kind::Malformed);
            return std::nullopt;
        case State::CallTool:
            if (!is_arg_symbol(s))
                return finish(Frame::Kind::Malformed);
            _arg = s;
            return finish(Frame::Kind::Call);
        case State::AnswerOpen:
            if (!is_arg_symbol(s))
                return finish(Frame::Kind::Malformed);
            _arg = s;
            return finish(Frame::Kind::Answer);
    }
    return std::nullopt;
}

auto decode_frames(std::span<const Symbol> actions) -> std::vector<Frame>
{
    auto decoder = FrameDecoder {};
    auto frames = std::vector<Frame> {};
    for (auto s: actions)
        if (auto f = decoder.push(s))
            frames.push_back(*f);
    return frames;
}

auto guess_value(std::string_view prompt) -> std::string
{
    return fmt::format("unknown-{:04x}", fnv1a(prompt) & 0xffff);
}

auto resolve_argument(Symbol arg, std::string_view prompt, const std::optional<std::string>& last_observation)
    -> std::string
{
    switch (arg)
    {
        case Symbol::ArgQuery: return query_subject(prompt);
        case Symbol::ArgObservation: return last_observation.value_or(std::string {});
        case Symbol::ArgGuess: return guess_value(prompt);
        default: throw ValidationError("not an argument symbol: " + std::string(to_string(arg)));
    }
}

// -- episodes ------------------------------------------------------------------

auto run_loop(const Emitter& emit, Context ctx, const Task& task, Stage stage, const EpisodeCaps& caps) -> Episode
{
    if (caps.max_steps < 1)
        throw ValidationError("max_steps must be >= 1");

    auto traj = Trajectory {};
    traj.task_id = task.id;
    traj.stage = stage;
    traj.context_fingerprint = ctx.fingerprint();

    auto env = EnvState(task, caps.max_steps);
    auto decoder = FrameDecoder {};
    auto lastObservation = std::optional<std::string> {};

    auto done = false;
    while (!done && traj.actions.size() < caps.max_len)
    {
        auto const [symbol, lp] = emit(ctx, traj.actions);
        traj.actions.push_back(symbol);
        traj.old_logp.push_back(lp);

        auto const frame = decoder.push(symbol);
        if (!frame)
            continue;
        switch (frame->kind)
        {
            case Frame::Kind::Stop: done = true; break;
            case Frame::Kind::Answer:
                traj.final_answer = resolve_argument(frame->arg, task.prompt, lastObservation);
                done = true;
                break;
            case Frame::Kind::Malformed:
                lastObservation = std::string(kMalformedCall);
                ctx.add_observation(traj.actions.size(), *lastObservation);
                break;
            case Frame::Kind::Call:
                if (env.remaining_steps() == 0)
                {
                    done = true; // budget exhausted: the attempted call is never executed
                    break;
                }
                auto call = ToolCall { .tool = frame->tool,
                                       .args = resolve_argument(frame->arg, task.prompt, lastObservation),
                                       .observation = {} };
                lastObservation = execute_tool(env, call);
                ctx.add_observation(traj.actions.size(), *lastObservation);
                break;
        }
    }
    traj.tool_calls = env.transcript();
    return Episode { .trajectory = std::move(traj), .context = std::move(ctx) };
}

auto run_episode(const PolicyParams& params, Context ctx, const Task& task, Stage stage, const EpisodeCaps& caps,
                 Rng& rng) -> Episode
{
    auto const emit = [&](const Context& c, std::span<const Symbol> prefix) {
        return sample_next(params, c, prefix, caps.temperature, rng);
    };
    return run_loop(emit, std::move(ctx), task, stage, caps);
}

auto oracle_script(TaskFamily family) -> std::vector<Symbol>
{
    using enum Symbol;
    auto const answer = std::vector<Symbol> { Answer, ArgObservation };
    auto script = std::vector<Symbol> {};
    switch (family)
    {
        case TaskFamily::Arithmetic: script = { ToolPythonCode, ArgQuery }; break;
        case TaskFamily::Lookup: script = { ToolSearch, ArgQuery }; break;
        case TaskFamily::FileExtract: script = { ToolFileReader, ArgQuery }; break;
        case TaskFamily::MultiHop: script = { ToolSearch, ArgQuery, ToolWebBrowse, ArgObservation }; break;
    }
    script.insert(script.end(), answer.begin(), answer.end());
    return script;
}

auto run_scripted(std::span<const Symbol> script, Context ctx, const Task& task, const EpisodeCaps& caps) -> Episode
{
    auto const emit = [&](const Context&, std::span<const Symbol> prefix) -> std::pair<Symbol, double> {
        return { prefix.size() < script.size() ? script[prefix.size()] : Symbol::End, 0.0 };
    };
    return run_loop(emit, std::move(ctx), task, Stage::First, caps);
}

auto replay_context(Context base, const Trajectory& t) -> Context
{
    auto nextCall = std::size_t { 0 };
    for (auto const& frame: decode_frames(t.actions))
    {
        if (frame.kind == Frame::Kind::Malformed)
            base.add_observation(frame.end, std::string(kMalformedCall));
        else if (frame.kind == Frame::Kind::Call && nextCall < t.tool_calls.size())
            base.add_observation(frame.end, t.tool_calls[nextCall++].observation);
    }
    return base;
}

} // namespace reagent
