#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

// Deterministic sampling helpers. std::mt19937_64 output is fixed by the
// standard; the distributions in <random> are not, so they are avoided here.

namespace magiceye::detail {

// Uniform draw in [0, bound) by rejection; unlike std::uniform_int_distribution
// the sequence is identical across standard library implementations.
inline std::uint64_t bounded_draw(std::mt19937_64& rng, std::uint64_t bound) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % bound;
}

template <typename T>
void portable_shuffle(std::vector<T>& v, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = v.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(bounded_draw(rng, i));
        std::swap(v[i - 1], v[j]);
    }
}

inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

// Box-Muller.
inline double standard_normal(std::mt19937_64& rng) {
    double u1 = uniform01(rng);
    while (u1 <= 0.0) u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

} // namespace magiceye::detail
