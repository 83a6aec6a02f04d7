#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace triq {

// Deterministic random source. std::mt19937_64 output is pinned by the
// standard, but std::*_distribution is implementation-defined, so all
// mappings from raw engine output to doubles are done by hand here. Two
// builds on any platform/stdlib therefore draw bit-identical sequences,
// which the reproducibility guarantees depend on.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t raw() { return engine_(); }

    // Uniform in [0, 1) with 53 random mantissa bits.
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Uniform integer in [0, n). Rejection-free modulo bias is irrelevant for
    // the ranges used here (n << 2^64), but reject anyway to keep it exact.
    std::uint64_t uniform_index(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = engine_();
        while (x >= limit) x = engine_();
        return x % n;
    }

    // Standard normal via Box-Muller. Uses exactly two uniforms per draw (no
    // cached spare) so the draw sequence is position-independent.
    double normal01() {
        double u1 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();  // guard log(0)
        const double u2 = uniform01();
        constexpr double two_pi = 6.283185307179586476925286766559;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal01(); }

private:
    std::mt19937_64 engine_;
};

}  // namespace triq
