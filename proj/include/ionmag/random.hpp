#pragma once

#include <cstdint>
#include <initializer_list>

namespace ionmag {

// SplitMix64 finalizer: a bijective 64-bit mixer.
constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

/// Derive a child key from a parent key and a path of indices, e.g.
/// derive_key(seed, {series, estimate, angle}). Independent of evaluation order.
constexpr std::uint64_t derive_key(std::uint64_t key, std::initializer_list<std::uint64_t> path) {
    std::uint64_t k = mix64(key ^ 0x6A09E667F3BCC909ull);
    for (std::uint64_t p : path) {
        k = mix64(k ^ mix64(p + 0xBB67AE8584CAA73Bull));
    }
    return k;
}

/// Counter-based stream: the i-th draw is a pure function of (key, i), so
/// streams can be split and replayed without sharing state.
class CounterRng {
public:
    explicit constexpr CounterRng(std::uint64_t key) : key_(mix64(key)) {}

    constexpr std::uint64_t at(std::uint64_t counter) const { return mix64(key_ ^ mix64(counter)); }

    constexpr std::uint64_t next() { return at(counter_++); }

    // uniform on [0, 1) with 53 random bits
    constexpr double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    constexpr std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

/// Number of successes in n Bernoulli(p) trials drawn from the stream keyed by `seed`.
/// Exact: one uniform per trial, so p = 0 gives 0 and p = 1 gives n.
inline std::uint64_t sample_binomial(double p, std::uint64_t n, std::uint64_t seed) {
    CounterRng rng(seed);
    std::uint64_t k = 0;
    for (std::uint64_t i = 0; i < n; ++i) {
        k += rng.uniform() < p ? 1u : 0u;
    }
    return k;
}

}  // namespace ionmag
