#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace synbt {

// Deterministic RNG used everywhere randomness is part of a contract.
// The engine is std::mt19937_64 (bit-exact across platforms); all value
// mappings are done here rather than with std::*_distribution, whose
// sequences are implementation-defined.
class Rng {
  public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Unbiased integer in [0, n), n >= 1. Rejection sampling on the top range.
    int64_t randint(int64_t n) {
        const uint64_t un = static_cast<uint64_t>(n);
        const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return static_cast<int64_t>(x % un);
    }

    bool coin(double p) { return uniform() < p; }

    // Box-Muller, no spare caching so call sites stay order-independent.
    double normal() {
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log1p(-u1));
        return r * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[static_cast<size_t>(randint(static_cast<int64_t>(i)))]);
        }
    }

    // Derive an independent child stream; tag keeps sibling streams apart.
    Rng child(uint64_t tag) { return Rng(mix(next_u64(), tag)); }

    // Stateless derivation for hierarchical seeding (does not advance parent).
    static uint64_t derive(uint64_t seed, uint64_t tag) { return mix(seed, tag); }

    static uint64_t derive(uint64_t seed, std::string_view tag) {
        uint64_t h = 0xcbf29ce484222325ull;
        for (char c : tag) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ull;
        }
        return mix(seed, h);
    }

  private:
    // splitmix64 finalizer over the combined words.
    static uint64_t mix(uint64_t a, uint64_t b) {
        uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    std::mt19937_64 eng_;
};

inline void fill_normal(float* dst, size_t n, Rng& rng) {
    for (size_t i = 0; i < n; ++i) dst[i] = static_cast<float>(rng.normal());
}

inline void fill_normal(double* dst, size_t n, Rng& rng) {
    for (size_t i = 0; i < n; ++i) dst[i] = rng.normal();
}

}  // namespace synbt
