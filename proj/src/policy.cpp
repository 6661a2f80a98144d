// SPDX-License-Identifier: Apache-2.0
#include <reagent/errors.hpp>
#include <reagent/policy.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>

namespace reagent
{

namespace
{

constexpr auto kBosHash = fnv1a("<bos>");

auto combine(std::uint64_t a, std::uint64_t b) -> std::uint64_t
{
    return splitmix64(a ^ std::rotl(b, 17));
}

auto symbol_hash(Symbol s) -> std::uint64_t
{
    return fnv1a(to_string(s), fnv1a("sym:"));
}

/// Whitespace tokens, lowercased, with surrounding punctuation stripped.
auto tokenize(std::string_view text) -> std::vector<std::string>
{
    auto tokens = std::vector<std::string> {};
    auto current = std::string {};
    auto flush = [&] {
        auto const isPunct = [](char c) { return std::string_view(".,;:!?()\"'[]").find(c) != std::string_view::npos; };
        auto b = current.begin();
        auto e = current.end();
        while (b != e && isPunct(*b))
            ++b;
        while (e != b && isPunct(*(e - 1)))
            --e;
        if (b != e)
            tokens.emplace_back(b, e);
        current.clear();
    };
    for (auto ch: text)
    {
        auto const c = static_cast<unsigned char>(ch);
        if (std::isspace(c))
            flush();
        else
            current.push_back(static_cast<char>(std::tolower(c)));
    }
    flush();
    return tokens;
}

auto observation_kind(std::string_view text) -> std::string_view
{
    if (text == "no results")
        return "noresult";
    if (text == "malformed call")
        return "malformed";
    if (text.starts_with("error"))
        return "error";
    if (text.starts_with("url:"))
        return "link";
    return "value";
}

void check_finite(const Eigen::VectorXd& logits)
{
    if (!logits.allFinite())
        throw NumericError("non-finite policy logits");
}

} // namespace

// -- PolicyParams ------------------------------------------------------------

PolicyParams::PolicyParams(std::size_t feature_dim, std::size_t vocab_size):
    _w(Matrix::Zero(static_cast<Eigen::Index>(feature_dim), static_cast<Eigen::Index>(vocab_size)))
{
    if (feature_dim < 1 || vocab_size < 2)
        throw ValidationError("policy needs F >= 1 and V >= 2");
}

PolicyParams::PolicyParams(Matrix weights): _w(std::move(weights))
{
    if (_w.rows() < 1 || _w.cols() < 2)
        throw ValidationError("policy needs F >= 1 and V >= 2");
    if (!_w.allFinite())
        throw ValidationError("policy weights must be finite");
}

auto PolicyParams::random(std::size_t feature_dim, std::size_t vocab_size, double scale, std::uint64_t seed)
    -> PolicyParams
{
    auto params = PolicyParams(feature_dim, vocab_size);
    auto rng = Rng(seed);
    for (Eigen::Index i = 0; i < params._w.size(); ++i)
        params._w.data()[i] = scale * rng.normal();
    return params;
}

auto PolicyParams::checksum() const -> std::uint64_t
{
    auto const bytes = std::string_view(reinterpret_cast<const char*>(_w.data()),
                                        static_cast<std::size_t>(_w.size()) * sizeof(double));
    return fnv1a(bytes);
}

// -- Context -----------------------------------------------------------------

auto Context::for_task(std::string prompt) -> Context
{
    auto ctx = Context {};
    ctx._prompt = std::move(prompt);
    ctx.rebuild_static();
    return ctx;
}

auto Context::refinement(std::string prompt, std::vector<Symbol> first_attempt, std::string critique,
                         std::size_t critique_chars) -> Context
{
    auto ctx = Context {};
    ctx._prompt = std::move(prompt);
    ctx._first = std::move(first_attempt);
    if (critique.size() > critique_chars)
        critique.resize(critique_chars);
    ctx._critique = std::move(critique);
    ctx.rebuild_static();
    return ctx;
}

void Context::add_observation(std::size_t after_actions, std::string text)
{
    if (!_observations.empty() && after_actions < _observations.back().after)
        throw ValidationError("observations must be appended in order");
    _observations.push_back(Observation { .after = after_actions, .text = std::move(text) });
}

void Context::rebuild_static()
{
    _static.clear();
    for (auto const& tok: tokenize(_prompt))
        _static.emplace_back(fnv1a(tok, fnv1a("q:")), 1.0);

    if (_first)
    {
        _static.emplace_back(fnv1a("stage:refine"), 1.0);
        auto seen = std::array<bool, kVocabSize> {};
        for (auto s: *_first)
            seen.at(static_cast<std::size_t>(s)) = true;
        for (std::size_t i = 0; i < kVocabSize; ++i)
            if (seen[i])
                _static.emplace_back(fnv1a(to_string(static_cast<Symbol>(i)), fnv1a("p:")), 1.0);
    }

    if (_critique)
    {
        auto const tokens = tokenize(*_critique);
        auto const w = tokens.empty() ? 0.0 : 1.0 / std::sqrt(static_cast<double>(tokens.size()));
        for (auto const& tok: tokens)
            _static.emplace_back(fnv1a(tok, fnv1a("c:")), w);
    }
}

auto Context::features(std::span<const Symbol> emitted, std::size_t feature_dim) const -> SparseFeatures
{
    auto const mod = static_cast<std::uint64_t>(feature_dim);
    auto out = SparseFeatures {};
    out.reserve(2 * _static.size() + 16);
    auto push = [&](std::uint64_t h, double v) { out.emplace_back(static_cast<std::uint32_t>(h % mod), v); };

    auto const n = emitted.size();
    auto const last = n >= 1 ? symbol_hash(emitted[n - 1]) : kBosHash;
    auto const prev = n >= 2 ? symbol_hash(emitted[n - 2]) : kBosHash;
    auto const l1 = combine(fnv1a("l1"), last);

    push(fnv1a("bias"), 1.0);
    push(l1, 1.0);
    push(combine(combine(fnv1a("l2"), prev), last), 1.0);

    auto kind = std::string_view("none");
    for (auto const& o: _observations)
        if (o.after <= n)
            kind = observation_kind(o.text);
    auto const obs = fnv1a(kind, fnv1a("obs:"));
    push(obs, 1.0);
    push(combine(obs, l1), 1.0);

    auto seen = std::array<bool, kAllTools.size()> {};
    for (auto s: emitted)
        if (is_tool_symbol(s))
            seen.at(static_cast<std::size_t>(tool_of(s))) = true;
    for (std::size_t t = 0; t < seen.size(); ++t)
    {
        if (!seen[t])
            continue;
        auto const h = fnv1a(to_string(static_cast<Tool>(t)), fnv1a("seen:"));
        push(h, 1.0);
        push(combine(h, l1), 1.0);
    }

    for (auto const& [h, w]: _static)
    {
        push(h, w);
        push(combine(h, l1), w);
    }
    return out;
}

auto Context::featurize(std::span<const Symbol> emitted, std::size_t feature_dim) const -> Eigen::VectorXd
{
    auto dense = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(feature_dim)).eval();
    for (auto const& [i, v]: features(emitted, feature_dim))
        dense[i] += v;
    return dense;
}

auto Context::fingerprint() const -> std::uint64_t
{
    auto h = fnv1a(_prompt);
    h = fnv1a("\x1f", h);
    if (_first)
    {
        h = fnv1a("first:", h);
        for (auto s: *_first)
            h = fnv1a(to_string(s), fnv1a(" ", h));
    }
    h = fnv1a("\x1f", h);
    if (_critique)
        h = fnv1a(*_critique, fnv1a("critique:", h));
    return h;
}

// -- distributions -----------------------------------------------------------

auto step_log_probs(const PolicyParams& params, const SparseFeatures& features, double temperature)
    -> Eigen::VectorXd
{
    if (!(temperature > 0.0))
        throw ValidationError("temperature must be > 0");
    auto const& w = params.weights();
    auto logits = Eigen::VectorXd::Zero(w.cols()).eval();
    for (auto const& [i, v]: features)
        logits += v * w.row(i).transpose();
    check_finite(logits);
    logits /= temperature;
    auto const m = logits.maxCoeff();
    auto const logZ = m + std::log((logits.array() - m).exp().sum());
    return (logits.array() - logZ).matrix();
}

auto sample_next(const PolicyParams& params, const Context& ctx, std::span<const Symbol> emitted,
                 double temperature, Rng& rng) -> std::pair<Symbol, double>
{
    auto const lp = step_log_probs(params, ctx.features(emitted, params.feature_dim()), temperature);
    auto const u = rng.uniform();
    auto cumulative = 0.0;
    auto choice = lp.size() - 1;
    for (Eigen::Index v = 0; v < lp.size(); ++v)
    {
        cumulative += std::exp(lp[v]);
        if (u < cumulative)
        {
            choice = v;
            break;
        }
    }
    return { static_cast<Symbol>(choice), lp[choice] };
}

auto sample(const PolicyParams& params, const Context& ctx, double temperature, std::size_t max_len, Rng& rng)
    -> SampledSequence
{
    if (max_len < 1)
        throw ValidationError("max_len must be >= 1");
    auto out = SampledSequence {};
    while (out.actions.size() < max_len)
    {
        auto const [s, lp] = sample_next(params, ctx, out.actions, temperature, rng);
        out.actions.push_back(s);
        out.logp.push_back(lp);
        if (s == Symbol::End)
            break;
    }
    return out;
}

namespace
{

void check_vocab(const PolicyParams& params, std::span<const Symbol> actions)
{
    for (auto a: actions)
        if (static_cast<std::size_t>(a) >= params.vocab_size())
            throw ValidationError("action index " + std::to_string(static_cast<int>(a)) + " outside vocabulary of size "
                                  + std::to_string(params.vocab_size()));
}

} // namespace

auto log_prob(const PolicyParams& params, const Context& ctx, std::span<const Symbol> actions) -> LogProb
{
    check_vocab(params, actions);
    auto out = LogProb {};
    out.per_token.reserve(actions.size());
    for (std::size_t t = 0; t < actions.size(); ++t)
    {
        auto const lp = step_log_probs(params, ctx.features(actions.first(t), params.feature_dim()), 1.0);
        out.per_token.push_back(lp[static_cast<Eigen::Index>(actions[t])]);
        out.total += out.per_token.back();
    }
    return out;
}

auto accumulate_grad_log_prob(const PolicyParams& params, const Context& ctx, std::span<const Symbol> actions,
                              double scale, Matrix& grad) -> double
{
    check_vocab(params, actions);
    if (grad.rows() != params.weights().rows() || grad.cols() != params.weights().cols())
        throw ValidationError("gradient shape mismatch");
    auto total = 0.0;
    for (std::size_t t = 0; t < actions.size(); ++t)
    {
        auto const f = ctx.features(actions.first(t), params.feature_dim());
        auto const lp = step_log_probs(params, f, 1.0);
        auto const a = static_cast<Eigen::Index>(actions[t]);
        total += lp[a];
        // d log softmax_a / d logits = onehot(a) - p
        auto delta = (-lp.array().exp()).matrix().eval();
        delta[a] += 1.0;
        for (auto const& [i, v]: f)
            grad.row(i) += (scale * v) * delta.transpose();
    }
    return total;
}

auto grad_log_prob(const PolicyParams& params, const Context& ctx, std::span<const Symbol> actions) -> Matrix
{
    auto grad = Matrix::Zero(params.weights().rows(), params.weights().cols()).eval();
    accumulate_grad_log_prob(params, ctx, actions, 1.0, grad);
    return grad;
}

// -- snapshots and checkpoints ----------------------------------------------

FrozenPolicy::FrozenPolicy(PolicyParams params): _params(std::make_shared<const PolicyParams>(std::move(params)))
{
}

auto snapshot(const PolicyParams& params) -> FrozenPolicy
{
    return FrozenPolicy(params);
}

namespace
{

constexpr std::array<char, 8> kCheckpointMagic = { 'R', 'G', 'P', 'O', 'L', 'C', 'K', 'P' };

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u32(std::ofstream& out, std::uint32_t v)
{
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

auto get_u32(std::ifstream& in, const char* what) -> std::uint32_t
{
    auto v = std::uint32_t {};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
        throw DecodeError(what, "truncated checkpoint header");
    return v;
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, const PolicyParams& params)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    auto out = std::ofstream(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error("cannot write checkpoint " + path.string());
    out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<std::uint32_t>(params.feature_dim()));
    put_u32(out, static_cast<std::uint32_t>(params.vocab_size()));
    put_u32(out, 0);
    auto const& w = params.weights();
    out.write(reinterpret_cast<const char*>(w.data()), static_cast<std::streamsize>(w.size() * sizeof(double)));
    if (!out)
        throw Error("failed writing checkpoint " + path.string());
}

auto load_checkpoint(const std::filesystem::path& path) -> PolicyParams
{
    auto in = std::ifstream(path, std::ios::binary);
    if (!in)
        throw Error("cannot open checkpoint " + path.string());
    auto magic = std::array<char, 8> {};
    if (!in.read(magic.data(), magic.size()) || magic != kCheckpointMagic)
        throw DecodeError("magic", "not a policy checkpoint");
    if (auto const version = get_u32(in, "version"); version != kCheckpointVersion)
        throw DecodeError("version", "unsupported checkpoint version " + std::to_string(version));
    auto const f = get_u32(in, "feature_dim");
    auto const v = get_u32(in, "vocab_size");
    get_u32(in, "reserved");
    auto w = Matrix(f, v);
    if (!in.read(reinterpret_cast<char*>(w.data()), static_cast<std::streamsize>(w.size() * sizeof(double))))
        throw DecodeError("weights", "truncated weight block");
    return PolicyParams(std::move(w));
}

} // namespace reagent
