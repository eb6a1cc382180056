#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace rg {

// Deterministic RNG. mt19937_64 has a standardized output sequence; the
// uniform/normal mappings below are fixed here so streams are bit-stable
// across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed), seed_mix_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // uniform in [0,1)
    double uniform() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // integer in [0, n)
    std::uint64_t uniform_int(std::uint64_t n) { return eng_() % n; }

    // Box-Muller; cached second value.
    double normal() {
        if (has_cache_) {
            has_cache_ = false;
            return cache_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        cache_ = r * std::sin(a);
        has_cache_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Independent child stream, e.g. one per training step or worker.
    Rng fork(std::uint64_t salt) const {
        std::uint64_t x = seed_mix_ ^ (salt + 0x9e3779b97f4a7c15ull);
        x ^= x >> 30; x *= 0xbf58476d1ce4e5b9ull;
        x ^= x >> 27; x *= 0x94d049bb133111ebull;
        x ^= x >> 31;
        return Rng(x);
    }

private:
    std::mt19937_64 eng_;
    std::uint64_t seed_mix_ = 0;
    double cache_ = 0.0;
    bool has_cache_ = false;
};

// Stable stream derivation for (seed, stream-id, index) triples.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    std::uint64_t x = seed;
    x ^= 0x9e3779b97f4a7c15ull + stream + (x << 6) + (x >> 2);
    x ^= 0x9e3779b97f4a7c15ull + index + (x << 6) + (x >> 2);
    x ^= x >> 30; x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27; x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
}

}  // namespace rg
