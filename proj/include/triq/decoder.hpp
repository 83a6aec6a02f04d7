#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "triq/errors.hpp"
#include "triq/optim.hpp"
#include "triq/rng.hpp"

namespace triq {

// Per-layer gradient accumulator mirroring MlpDecoder's layer shapes.
struct MlpGrads {
    std::vector<std::vector<double>> W;
    std::vector<std::vector<double>> b;

    void zero() {
        for (auto& g : W) std::fill(g.begin(), g.end(), 0.0);
        for (auto& g : b) std::fill(g.begin(), g.end(), 0.0);
    }
};

// Intermediate activations of one forward pass, kept for backprop. Reuse one
// cache object across calls to avoid reallocation.
struct MlpCache {
    std::vector<std::vector<double>> x;  // input to each layer
    std::vector<std::vector<double>> z;  // pre-activation of each layer
};

// Small fully connected scalar-output decoder, ReLU hidden activations,
// linear head, trained by exact manual backprop + Adam. `depth` counts hidden
// layers; depth 0 degenerates to a linear map.
class MlpDecoder {
public:
    struct Layer {
        int rows = 0, cols = 0;
        std::vector<double> W;  // row-major rows x cols
        std::vector<double> b;  // rows
        std::vector<double> mW, vW, mb, vb;  // Adam moments (transient)
    };

    MlpDecoder() = default;

    // Xavier-uniform init: W ~ U(-a, a), a = sqrt(6 / (fan_in + fan_out)),
    // biases zero. Weight draw order is row-major, layer by layer.
    static MlpDecoder init(int input_dim, int hidden_width, int depth, std::uint64_t seed) {
        if (input_dim < 1 || hidden_width < 1 || depth < 0)
            throw InvalidConfig("mlp: bad shape input=" + std::to_string(input_dim) +
                                " hidden=" + std::to_string(hidden_width) +
                                " depth=" + std::to_string(depth));
        MlpDecoder mlp;
        Rng rng(seed);
        int in = input_dim;
        for (int l = 0; l < depth; ++l) {
            mlp.layers_.push_back(make_layer(hidden_width, in, rng));
            in = hidden_width;
        }
        mlp.layers_.push_back(make_layer(1, in, rng));
        return mlp;
    }

    int input_dim() const { return layers_.front().cols; }
    const std::vector<Layer>& layers() const { return layers_; }
    std::vector<Layer>& layers() { return layers_; }
    std::uint64_t step() const { return step_; }
    void set_step(std::uint64_t t) { step_ = t; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers_) n += std::size_t(l.rows) * l.cols + l.rows;
        return n;
    }

    MlpGrads make_grads() const {
        MlpGrads g;
        for (const auto& l : layers_) {
            g.W.emplace_back(std::size_t(l.rows) * l.cols, 0.0);
            g.b.emplace_back(l.rows, 0.0);
        }
        return g;
    }

    // Forward pass; fills `cache` and returns the scalar prediction.
    double forward(const double* input, MlpCache& cache) const {
        const std::size_t L = layers_.size();
        cache.x.resize(L);
        cache.z.resize(L);
        cache.x[0].assign(input, input + layers_[0].cols);
        for (std::size_t l = 0; l < L; ++l) {
            const Layer& ly = layers_[l];
            const std::vector<double>& in = cache.x[l];
            std::vector<double>& z = cache.z[l];
            z.assign(ly.rows, 0.0);
            for (int r = 0; r < ly.rows; ++r) {
                const double* wr = &ly.W[std::size_t(r) * ly.cols];
                double s = ly.b[r];
                for (int c = 0; c < ly.cols; ++c) s += wr[c] * in[c];
                z[r] = s;
            }
            if (l + 1 < L) {
                std::vector<double>& a = cache.x[l + 1];
                a.resize(ly.rows);
                for (int r = 0; r < ly.rows; ++r) a[r] = z[r] > 0.0 ? z[r] : 0.0;
            }
        }
        return cache.z.back()[0];
    }

    // Backprop dL/ds through the cached pass. Parameter gradients accumulate
    // into `grads`; the gradient w.r.t. the network input is written to
    // `dl_dinput` (resized). ReLU uses subgradient 0 at exactly z == 0.
    void backward(const MlpCache& cache, double dl_ds, MlpGrads& grads,
                  std::vector<double>& dl_dinput) const {
        const std::size_t L = layers_.size();
        std::vector<double> delta{dl_ds};
        std::vector<double> next;
        for (std::size_t li = L; li-- > 0;) {
            const Layer& ly = layers_[li];
            const std::vector<double>& in = cache.x[li];
            double* gW = grads.W[li].data();
            double* gb = grads.b[li].data();
            for (int r = 0; r < ly.rows; ++r) {
                const double dr = delta[r];
                gb[r] += dr;
                double* gwr = gW + std::size_t(r) * ly.cols;
                for (int c = 0; c < ly.cols; ++c) gwr[c] += dr * in[c];
            }
            next.assign(ly.cols, 0.0);
            for (int r = 0; r < ly.rows; ++r) {
                const double dr = delta[r];
                const double* wr = &ly.W[std::size_t(r) * ly.cols];
                for (int c = 0; c < ly.cols; ++c) next[c] += wr[c] * dr;
            }
            if (li > 0) {
                const std::vector<double>& z = cache.z[li - 1];
                for (std::size_t c = 0; c < next.size(); ++c)
                    if (z[c] <= 0.0) next[c] = 0.0;
                delta = next;
            } else {
                dl_dinput = next;
            }
        }
    }

    // One Adam step over all weights/biases; bumps the step counter.
    void adam_step(const MlpGrads& grads, const AdamConfig& cfg) {
        ++step_;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            Layer& ly = layers_[l];
            adam_update(ly.W.data(), grads.W[l].data(), ly.mW.data(), ly.vW.data(), ly.W.size(),
                        cfg, step_);
            adam_update(ly.b.data(), grads.b[l].data(), ly.mb.data(), ly.vb.data(), ly.b.size(),
                        cfg, step_);
        }
    }

private:
    static Layer make_layer(int rows, int cols, Rng& rng) {
        Layer ly;
        ly.rows = rows;
        ly.cols = cols;
        const double a = std::sqrt(6.0 / (rows + cols));
        ly.W.resize(std::size_t(rows) * cols);
        for (auto& w : ly.W) w = rng.uniform(-a, a);
        ly.b.assign(rows, 0.0);
        ly.mW.assign(ly.W.size(), 0.0);
        ly.vW.assign(ly.W.size(), 0.0);
        ly.mb.assign(rows, 0.0);
        ly.vb.assign(rows, 0.0);
        return ly;
    }

    std::vector<Layer> layers_;
    std::uint64_t step_ = 0;
};

}  // namespace triq
