#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "triq/errors.hpp"
#include "triq/geometry.hpp"
#include "triq/rng.hpp"

namespace triq {

// Gaussian Fourier positional encoding. m scalar frequencies are drawn once
// from N(0, sigma2); a point then maps to, per frequency i,
//   sin(2*pi*s_i*x), sin(2*pi*s_i*y), sin(2*pi*s_i*z),
//   cos(2*pi*s_i*x), cos(2*pi*s_i*y), cos(2*pi*s_i*z),
// laid out [sin-block_i, cos-block_i] for i = 0..m-1, 6m values total.
// sin^2 + cos^2 = 1 per (frequency, axis), so |gamma(p)|^2 = 3m always.
class PositionalEncoder {
public:
    PositionalEncoder() = default;

    static PositionalEncoder init(int m, double sigma2, std::uint64_t seed) {
        if (m < 0 || sigma2 < 0.0)
            throw InvalidConfig("positional encoder: m and sigma2 must be non-negative");
        PositionalEncoder enc;
        enc.freq_.resize(m);
        Rng rng(seed);
        const double sigma = std::sqrt(sigma2);
        for (int i = 0; i < m; ++i) enc.freq_[i] = rng.normal(0.0, sigma);
        return enc;
    }

    static PositionalEncoder from_frequencies(std::vector<double> freq) {
        PositionalEncoder enc;
        enc.freq_ = std::move(freq);
        return enc;
    }

    int m() const { return static_cast<int>(freq_.size()); }
    int dim() const { return 6 * m(); }
    const std::vector<double>& frequencies() const { return freq_; }

    // Writes dim() doubles to out.
    void encode(const Vec3& p, double* out) const {
        constexpr double two_pi = 6.283185307179586476925286766559;
        for (std::size_t i = 0; i < freq_.size(); ++i) {
            const double ax = two_pi * freq_[i] * p.x;
            const double ay = two_pi * freq_[i] * p.y;
            const double az = two_pi * freq_[i] * p.z;
            double* b = out + 6 * i;
            b[0] = std::sin(ax);
            b[1] = std::sin(ay);
            b[2] = std::sin(az);
            b[3] = std::cos(ax);
            b[4] = std::cos(ay);
            b[5] = std::cos(az);
        }
    }

private:
    std::vector<double> freq_;
};

}  // namespace triq
