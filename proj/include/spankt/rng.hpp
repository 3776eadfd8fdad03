#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace spankt {

// Deterministic RNG used everywhere model behaviour must be reproducible.
// mt19937_64 is fully specified by the standard; the value mappings below
// avoid std::*_distribution, whose output is implementation-defined.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n). n must be > 0.
    size_t uniform_int(size_t n) {
        // Rejection sampling to stay unbiased.
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x = engine_();
        while (x >= limit) x = engine_();
        return static_cast<size_t>(x % n);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Standard normal via Box-Muller; second value cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    // Derive an independent stream, e.g. one per training step.
    static uint64_t mix(uint64_t seed, uint64_t salt) {
        uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace spankt
