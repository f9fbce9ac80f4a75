#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace pauth {

using Rng = std::mt19937_64;

// splitmix64, used to scramble (seed, stream) pairs into engine seeds so
// that derived streams are statistically independent of each other.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline Rng make_rng(std::uint64_t seed) { return Rng(splitmix64(seed)); }

// Derives an independent stream from a base seed. Never reuse (seed, stream)
// pairs across call sites that must be decorrelated.
inline Rng split_rng(std::uint64_t seed, std::uint64_t stream) {
    return Rng(splitmix64(splitmix64(seed) ^ splitmix64(stream * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL)));
}

// Uniform double in [0, 1) with 53 random bits. Hand-rolled instead of
// std::uniform_real_distribution so sequences are identical across standard
// library implementations.
inline double rand_uniform(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform integer in [0, n). Rejection sampling, no modulo bias.
inline int rand_index(Rng& rng, int n) {
    if (n <= 0) throw std::invalid_argument("rand_index: n must be positive");
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return static_cast<int>(x % un);
}

// Standard normal via Marsaglia polar method; the second deviate of each
// pair is discarded to keep the call stateless.
inline double rand_normal(Rng& rng) {
    double u, v, s;
    do {
        u = 2.0 * rand_uniform(rng) - 1.0;
        v = 2.0 * rand_uniform(rng) - 1.0;
        s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    return u * std::sqrt(-2.0 * std::log(s) / s);
}

// Samples an index from an explicit probability vector by inverse-CDF scan.
// Probabilities must be non-negative; they are normalized by their sum.
inline int sample_categorical(Rng& rng, std::span<const double> probs) {
    if (probs.empty()) throw std::invalid_argument("sample_categorical: empty support");
    double total = 0.0;
    for (double p : probs) {
        if (p < 0.0) throw std::invalid_argument("sample_categorical: negative probability");
        total += p;
    }
    if (total <= 0.0) throw std::invalid_argument("sample_categorical: zero mass");
    const double u = rand_uniform(rng) * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) return static_cast<int>(i);
    }
    // u landed in the round-off tail; return the last index with mass.
    for (std::size_t i = probs.size(); i-- > 0;) {
        if (probs[i] > 0.0) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size()) - 1;
}

// k distinct indices drawn uniformly from [0, n), in draw order
// (partial Fisher-Yates over an index table).
inline std::vector<int> sample_without_replacement(Rng& rng, int n, int k) {
    if (k > n) throw std::invalid_argument("sample_without_replacement: k > n");
    if (k < 0) throw std::invalid_argument("sample_without_replacement: negative k");
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        const int j = i + rand_index(rng, n - i);
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
        out.push_back(idx[static_cast<std::size_t>(i)]);
    }
    return out;
}

}  // namespace pauth
