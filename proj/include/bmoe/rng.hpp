#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

// Distribution helpers implemented on top of mt19937_64 so that generated
// values are identical across standard library implementations.
namespace bmoe::rng {

inline double uniform01(std::mt19937_64& g) {
    return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& g, double lo, double hi) {
    return lo + (hi - lo) * uniform01(g);
}

// Box-Muller, cosine branch.
inline double normal(std::mt19937_64& g) {
    double u1 = uniform01(g);
    if (u1 < 1e-300) u1 = 1e-300;
    const double u2 = uniform01(g);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

// Unbiased integer in [0, n).
inline std::uint64_t below(std::mt19937_64& g, std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r;
    do {
        r = g();
    } while (r >= limit);
    return r % n;
}

template <typename T>
void shuffle(std::vector<T>& v, std::mt19937_64& g) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(below(g, i));
        std::swap(v[i - 1], v[j]);
    }
}

// splitmix64 finalizer; combines seeds into independent streams.
inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9E3779B97F4A7C15ull * (b + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return mix(mix(a, b), c);
}

}  // namespace bmoe::rng
