#ifndef MOST_RNG_HPP
#define MOST_RNG_HPP

#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>

namespace most
{

// std::mt19937_64 is bit-identical across standard libraries; the std
// distributions are not, so the draws below are implemented directly.
using Rng = std::mt19937_64;

/// SplitMix64 finalizer, used to derive independent sub-seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream)
{
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Uniform integer in [0, n). n must be > 0.
inline std::uint64_t uniform_index(Rng &rng, std::uint64_t n)
{
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = rng();
    while (x >= limit)
        x = rng();
    return x % n;
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng &rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform_real(Rng &rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

} // namespace most

#endif // MOST_RNG_HPP
