// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace reagent
{

inline constexpr auto splitmix64(std::uint64_t x) -> std::uint64_t
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Order-dependent combination of seeds into a stream id.
template <typename... Ts>
constexpr auto mix_seed(std::uint64_t seed, Ts... parts) -> std::uint64_t
{
    auto h = splitmix64(seed);
    ((h = splitmix64(h ^ static_cast<std::uint64_t>(parts))), ...);
    return h;
}

/// 64-bit FNV-1a; stable across platforms and runs.
inline constexpr auto fnv1a(std::string_view text, std::uint64_t h = 0xcbf29ce484222325ULL) -> std::uint64_t
{
    for (auto c: text)
    {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Seeded generator. Draws are defined here rather than through std distributions
/// so streams are identical across standard library implementations.
class Rng
{
  public:
    explicit Rng(std::uint64_t seed): _engine(seed) {}

    auto next_u64() -> std::uint64_t { return _engine(); }

    /// Uniform in [0, 1).
    auto uniform() -> double { return static_cast<double>(_engine() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [lo, hi].
    auto uniform_int(std::int64_t lo, std::int64_t hi) -> std::int64_t
    {
        auto const span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(_engine() % span);
    }

    /// Standard normal via Box-Muller.
    auto normal() -> double
    {
        auto u1 = uniform();
        while (u1 <= 0.0)
            u1 = uniform();
        auto const u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    auto engine() -> std::mt19937_64& { return _engine; }

  private:
    std::mt19937_64 _engine;
};

} // namespace reagent
