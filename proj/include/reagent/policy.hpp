// SPDX-License-Identifier: Apache-2.0
#pragma once

// Linear-softmax autoregressive policy over the symbol vocabulary. At every
// step the conditioning context (prompt, optional first attempt and critique,
// observations so far, and the emitted prefix) is feature-hashed into a
// fixed-length vector f, and the next-symbol distribution is softmax(W^T f / T).

#include <reagent/core_types.hpp>
#include <reagent/random.hpp>

#include <Eigen/Dense>

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace reagent
{

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr std::size_t kDefaultFeatureDim = 512;

class PolicyParams
{
  public:
    PolicyParams(std::size_t feature_dim, std::size_t vocab_size = kVocabSize);
    explicit PolicyParams(Matrix weights);

    /// Gaussian init with standard deviation `scale`.
    static auto random(std::size_t feature_dim, std::size_t vocab_size, double scale, std::uint64_t seed)
        -> PolicyParams;

    [[nodiscard]] auto feature_dim() const noexcept -> std::size_t { return static_cast<std::size_t>(_w.rows()); }
    [[nodiscard]] auto vocab_size() const noexcept -> std::size_t { return static_cast<std::size_t>(_w.cols()); }
    [[nodiscard]] auto weights() const noexcept -> const Matrix& { return _w; }
    [[nodiscard]] auto weights() noexcept -> Matrix& { return _w; }

    /// FNV-1a over the raw weight bytes.
    [[nodiscard]] auto checksum() const -> std::uint64_t;

    auto operator==(const PolicyParams& other) const -> bool { return _w == other._w; }

  private:
    Matrix _w; // [F x V]
};

struct Observation
{
    std::size_t after = 0; // number of actions emitted before this observation arrived
    std::string text;

    auto operator==(const Observation&) const -> bool = default;
};

/// Sparse view of a hashed feature vector: (index, value) pairs, indices may repeat.
using SparseFeatures = std::vector<std::pair<std::uint32_t, double>>;

class Context
{
  public:
    /// Plain first-attempt context: the task prompt only.
    static auto for_task(std::string prompt) -> Context;

    /// Refinement context (q, o1, c). The critique is truncated to `critique_chars`
    /// characters (tail dropped) before featurization.
    static auto refinement(std::string prompt, std::vector<Symbol> first_attempt, std::string critique,
                           std::size_t critique_chars = 240) -> Context;

    void add_observation(std::size_t after_actions, std::string text);

    [[nodiscard]] auto prompt() const noexcept -> const std::string& { return _prompt; }
    [[nodiscard]] auto first_attempt() const noexcept -> const std::optional<std::vector<Symbol>>& { return _first; }
    [[nodiscard]] auto critique() const noexcept -> const std::optional<std::string>& { return _critique; }
    [[nodiscard]] auto observations() const noexcept -> const std::vector<Observation>& { return _observations; }

    /// Features for choosing the next symbol after `emitted`.
    [[nodiscard]] auto features(std::span<const Symbol> emitted, std::size_t feature_dim) const -> SparseFeatures;

    /// Dense form of `features`.
    [[nodiscard]] auto featurize(std::span<const Symbol> emitted, std::size_t feature_dim) const -> Eigen::VectorXd;

    /// Hash of the conditioning context (prompt, first attempt, critique).
    [[nodiscard]] auto fingerprint() const -> std::uint64_t;

  private:
    Context() = default;
    void rebuild_static();

    std::string _prompt;
    std::optional<std::vector<Symbol>> _first;
    std::optional<std::string> _critique;
    std::vector<Observation> _observations;
    std::vector<std::pair<std::uint64_t, double>> _static; // hashed context tokens with weights
};

/// Per-step next-symbol log-probabilities at the given temperature.
auto step_log_probs(const PolicyParams& params, const SparseFeatures& features, double temperature)
    -> Eigen::VectorXd;

struct SampledSequence
{
    std::vector<Symbol> actions;
    std::vector<double> logp; // under the tempered distribution that was sampled
};

/// Draws one symbol after `emitted`; returns the symbol and its tempered log-probability.
auto sample_next(const PolicyParams& params, const Context& ctx, std::span<const Symbol> emitted,
                 double temperature, Rng& rng) -> std::pair<Symbol, double>;

/// Tool-free generation: samples until End or `max_len` symbols.
auto sample(const PolicyParams& params, const Context& ctx, double temperature, std::size_t max_len, Rng& rng)
    -> SampledSequence;

struct LogProb
{
    double total = 0.0;
    std::vector<double> per_token;
};

/// Log-probability of `actions` at temperature 1.
auto log_prob(const PolicyParams& params, const Context& ctx, std::span<const Symbol> actions) -> LogProb;

/// d log pi(actions | ctx) / dW, shape [F x V].
auto grad_log_prob(const PolicyParams& params, const Context& ctx, std::span<const Symbol> actions) -> Matrix;

/// grad += scale * d log pi / dW. Returns the total log-probability as a by-product.
auto accumulate_grad_log_prob(const PolicyParams& params, const Context& ctx, std::span<const Symbol> actions,
                              double scale, Matrix& grad) -> double;

/// Immutable deep copy of a parameter set, used for the sampling and reference policies.
class FrozenPolicy
{
  public:
    explicit FrozenPolicy(PolicyParams params);

    [[nodiscard]] auto params() const noexcept -> const PolicyParams& { return *_params; }
    [[nodiscard]] auto log_prob(const Context& ctx, std::span<const Symbol> actions) const -> LogProb
    {
        return reagent::log_prob(*_params, ctx, actions);
    }

    auto operator==(const FrozenPolicy& other) const -> bool { return *_params == *other._params; }

  private:
    std::shared_ptr<const PolicyParams> _params;
};

auto snapshot(const PolicyParams& params) -> FrozenPolicy;

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary checkpoint: 8-byte magic, u32 version, u32 F, u32 V, u32 reserved,
/// then F*V little-endian float64 in row-major order.
void save_checkpoint(const std::filesystem::path& path, const PolicyParams& params);
auto load_checkpoint(const std::filesystem::path& path) -> PolicyParams;

} // namespace reagent
