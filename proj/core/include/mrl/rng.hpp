#pragma once

#include "mrl/stats.hpp"

#include <cstdint>
#include <random>

namespace mrl {

// splitmix64 mix step; used to derive independent, reproducible
// per-replicate seeds from one master seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Deterministic draw helpers over mt19937_64.  All sampling goes through
// uniform01/inverse-CDF transforms so that a fixed seed yields identical
// streams on every run of the same build.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    static Rng stream(std::uint64_t seed, std::uint64_t idx) {
        return Rng(mix_seed(seed, idx));
    }

    // Uniform on (0,1), 53-bit resolution, never returns 0 or 1.
    double uniform01() {
        const std::uint64_t bits = eng_() >> 11;  // 53 bits
        double u = (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
        return u;
    }

    double uniform(double a, double b) { return a + (b - a) * uniform01(); }

    double normal() { return norm_quantile(uniform01()); }

    double exponential() { return -std::log(uniform01()); }

    bool bernoulli(double p) { return uniform01() < p; }

    std::uint64_t next_u64() { return eng_(); }

private:
    std::mt19937_64 eng_;
};

} // namespace mrl
