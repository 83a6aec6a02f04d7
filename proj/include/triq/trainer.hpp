#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "triq/decoder.hpp"
#include "triq/encoding.hpp"
#include "triq/feature_grid.hpp"
#include "triq/geometry.hpp"
#include "triq/meshing.hpp"
#include "triq/optim.hpp"
#include "triq/rng.hpp"

namespace triq {

// ---------------------------------------------------------------------------
// Configuration. Field order here is the checkpoint config-block order:
// integers serialize as u64, reals as f64, in exactly this sequence.
// ---------------------------------------------------------------------------

struct TrainConfig {
    // ray sampling
    std::uint64_t ns = 3;          // near-surface samples per ray
    std::uint64_t nf = 3;          // free-space samples per ray
    double tau = 0.3;              // truncation band half-width [m]
    double tau_s = 0.05;           // sigmoid scale for BCE [m]
    std::uint64_t batch_rays = 1024;
    std::uint64_t iterations = 2000;
    // optimizer
    double lr_features = 1e-2;
    double lr_mlp = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 1;
    // representation
    std::uint64_t h = 3;       // feature levels kept (deepest h)
    std::uint64_t l_max = 12;  // deepest quadtree level
    std::uint64_t d = 8;       // feature vector length per vertex
    std::uint64_t m = 16;      // Fourier frequencies
    double sigma2 = 50.0;      // frequency variance
    std::uint64_t mlp_depth = 2;
    std::uint64_t mlp_hidden = 32;
    double leaf_res = 0.1;  // leaf cell size at l_max [m]
    // ray handling
    double t_min = 0.5;      // free-space sampling lower bound [m]
    double max_range = 60.0; // endpoints beyond this are dropped [m]
    double init_std = 0.01;  // feature init stddev
    double mask_res = 0.1;   // occupancy mask cell size [m]

    // Optional fixed extent anchor (auto-computed from data when unset).
    // Not part of the checkpoint config block; the resolved extent is stored
    // separately in the checkpoint.
    bool has_extent_origin = false;
    Vec3 extent_origin;

    double extent_side() const {
        return leaf_res * static_cast<double>(std::uint64_t{1} << l_max);
    }
    int feature_dim() const { return static_cast<int>(d * h); }
    int input_dim() const { return feature_dim() + 6 * static_cast<int>(m); }

    void validate() const {
        if (ns == 0 && nf == 0) throw InvalidConfig("ns and nf cannot both be zero");
        if (!(tau > 0.0)) throw InvalidConfig("tau must be positive");
        if (!(tau_s > 0.0)) throw InvalidConfig("tau_s must be positive");
        if (batch_rays == 0) throw InvalidConfig("batch_rays must be positive");
        if (!(leaf_res > 0.0)) throw InvalidConfig("leaf_res must be positive");
        if (h == 0 || l_max > 30 || h > l_max + 1)
            throw InvalidConfig("need 1 <= h <= l_max + 1 and l_max <= 30");
        if (d == 0) throw InvalidConfig("d must be positive");
        if (mlp_hidden == 0) throw InvalidConfig("mlp_hidden must be positive");
        if (!(t_min >= 0.0)) throw InvalidConfig("t_min must be non-negative");
        if (!(max_range > 0.0)) throw InvalidConfig("max_range must be positive");
        if (!(init_std >= 0.0)) throw InvalidConfig("init_std must be non-negative");
        if (!(mask_res > 0.0)) throw InvalidConfig("mask_res must be positive");
    }
};

// ---------------------------------------------------------------------------
// Ray sampling and loss.
// ---------------------------------------------------------------------------

struct TrainingSample {
    enum class Kind : std::uint8_t { near_surface, free_space };
    Vec3 p;
    double label = 0.0;  // clamped signed distance along the ray
    Kind kind = Kind::near_surface;
};

// Projected-distance label: signed offset from the endpoint along the ray,
// clamped to the truncation band. Points between sensor and endpoint are
// negative; points past the endpoint positive.
inline double sdf_label(double t, double depth, double tau) {
    return std::clamp(t - depth, -tau, tau);
}

// Draw ns near-surface + nf free-space samples for one ray. Near-surface t is
// uniform in (depth - tau, depth + tau); free-space t uniform in
// (t_min, depth - tau), skipped entirely when that interval is empty.
// Throws DegenerateRay when depth <= tau (no room for the truncation band).
inline void sample_ray(const Ray& ray, const TrainConfig& cfg, Rng& rng,
                       std::vector<TrainingSample>& out) {
    if (!(ray.depth > cfg.tau))
        throw DegenerateRay("ray depth " + std::to_string(ray.depth) + " <= tau");
    for (std::uint64_t i = 0; i < cfg.ns; ++i) {
        const double t = rng.uniform(ray.depth - cfg.tau, ray.depth + cfg.tau);
        out.push_back({ray.point_at(t), sdf_label(t, ray.depth, cfg.tau),
                       TrainingSample::Kind::near_surface});
    }
    if (ray.depth - cfg.tau > cfg.t_min) {
        for (std::uint64_t i = 0; i < cfg.nf; ++i) {
            const double t = rng.uniform(cfg.t_min, ray.depth - cfg.tau);
            out.push_back({ray.point_at(t), sdf_label(t, ray.depth, cfg.tau),
                           TrainingSample::Kind::free_space});
        }
    }
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Binary cross-entropy between sigmoid-mapped distances. Both the target and
// the prediction map through o = sigmoid(s / tau_s); the loss is
//   -[o_gt ln(o_pred) + (1 - o_gt) ln(1 - o_pred)]
// and the analytic derivative w.r.t. the predicted distance is
//   (o_pred - o_gt) / tau_s.
// Logs are clamped at 1e-12 to keep the loss finite.
struct BceResult {
    double loss = 0.0;
    double dloss_dpred = 0.0;
};

inline BceResult bce_loss(double pred, double gt, double tau_s) {
    const double op = sigmoid(pred / tau_s);
    const double og = sigmoid(gt / tau_s);
    const double loss = -(og * std::log(std::max(op, 1e-12)) +
                          (1.0 - og) * std::log(std::max(1.0 - op, 1e-12)));
    return {loss, (op - og) / tau_s};
}

// ---------------------------------------------------------------------------
// Model: everything a checkpoint holds. The SDF is
//   s(p) = MLP([V(p), gamma(p)]).
// ---------------------------------------------------------------------------

struct EvalScratch {
    std::vector<double> phi;
    MlpCache cache;
    InterpRecord rec;
};

struct Model {
    TrainConfig cfg;
    Extent extent;
    PositionalEncoder enc;
    FeaturePlaneSet fps;
    MlpDecoder mlp;

    // `master` is the run's single random stream: it seeds the encoder and
    // MLP here and keeps driving sampling/allocation during training.
    static Model init(const TrainConfig& cfg, const Extent& extent, Rng& master) {
        cfg.validate();
        Model model;
        model.cfg = cfg;
        model.extent = extent;
        model.enc = PositionalEncoder::init(static_cast<int>(cfg.m), cfg.sigma2, master.raw());
        model.fps = FeaturePlaneSet(extent, static_cast<int>(cfg.d), static_cast<int>(cfg.h),
                                    static_cast<int>(cfg.l_max));
        model.mlp = MlpDecoder::init(cfg.input_dim(), static_cast<int>(cfg.mlp_hidden),
                                     static_cast<int>(cfg.mlp_depth), master.raw());
        return model;
    }

    static Model init(const TrainConfig& cfg, const Extent& extent) {
        Rng master(cfg.seed);
        return init(cfg, extent, master);
    }

    // Predicted signed distance at p. Throws OutOfExtent outside the extent.
    double sdf(const Vec3& p, EvalScratch& scratch) const {
        if (!extent.contains(p)) throw OutOfExtent("sdf query outside extent");
        scratch.phi.resize(cfg.input_dim());
        fps.query_point_feature(p, scratch.phi.data());
        enc.encode(p, scratch.phi.data() + fps.feature_dim());
        return mlp.forward(scratch.phi.data(), scratch.cache);
    }
};

// ---------------------------------------------------------------------------
// Batch machinery. Split out so tests can drive fixed batches and finite
// difference checks through the exact code path train() uses.
// ---------------------------------------------------------------------------

// Make sure every vertex the batch touches exists (lazy allocation pre-pass;
// must run before gradients are routed).
inline void allocate_batch(Model& model, const std::vector<TrainingSample>& batch, Rng& rng) {
    for (const auto& s : batch) model.fps.allocate_for_point(s.p, model.cfg.init_std, rng);
}

// Mean BCE loss over the batch; when `grads` is non-null, accumulates MLP
// parameter gradients there and feature gradients inside the plane set (both
// scaled by 1/batch size). Throws NonFiniteLoss on NaN/inf.
inline double batch_pass(Model& model, const std::vector<TrainingSample>& batch,
                         MlpGrads* grads, EvalScratch& scratch) {
    if (batch.empty()) return 0.0;
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    const int feat_dim = model.fps.feature_dim();
    scratch.phi.resize(model.cfg.input_dim());
    std::vector<double> dl_dphi;
    double total = 0.0;
    for (const auto& s : batch) {
        model.fps.query_point_feature(s.p, scratch.phi.data(), grads ? &scratch.rec : nullptr);
        model.enc.encode(s.p, scratch.phi.data() + feat_dim);
        const double pred = model.mlp.forward(scratch.phi.data(), scratch.cache);
        const BceResult bce = bce_loss(pred, s.label, model.cfg.tau_s);
        total += bce.loss;
        if (!std::isfinite(bce.loss))
            throw NonFiniteLoss("non-finite loss at sample (" + std::to_string(s.p.x) + ", " +
                                std::to_string(s.p.y) + ", " + std::to_string(s.p.z) +
                                "), pred=" + std::to_string(pred) +
                                ", label=" + std::to_string(s.label));
        if (grads) {
            model.mlp.backward(scratch.cache, bce.dloss_dpred * inv_n, *grads, dl_dphi);
            model.fps.accumulate_gradient(scratch.rec, dl_dphi.data());
        }
    }
    return total * inv_n;
}

// One optimization step from accumulated gradients. The MLP step counter is
// the global Adam time step for both parameter groups.
inline void apply_adam(Model& model, const MlpGrads& grads) {
    const TrainConfig& c = model.cfg;
    model.mlp.adam_step(grads, {c.lr_mlp, c.beta1, c.beta2, c.adam_eps});
    model.fps.adam_step({c.lr_features, c.beta1, c.beta2, c.adam_eps}, model.mlp.step());
}

// ---------------------------------------------------------------------------
// Full training loop.
// ---------------------------------------------------------------------------

struct TrainResult {
    Model model;
    OccupancyMask mask;
    double final_loss = 0.0;
    std::uint64_t degenerate_rays = 0;  // rays skipped because depth <= tau
};

// Fit a model to world-frame rays. Deterministic: a fixed (rays, cfg) pair
// reproduces every parameter bit for bit. `sample_observer`, when set, sees
// every training sample exactly once (used for occupancy statistics in tests).
inline TrainResult train(const std::vector<Ray>& rays, const TrainConfig& cfg,
                         const std::function<void(const TrainingSample&)>& sample_observer = {},
                         std::ostream* progress = nullptr) {
    cfg.validate();
    if (rays.empty()) throw InvalidConfig("no rays to train on");

    // Resolve the extent: a cube of side leaf_res * 2^l_max anchored so the
    // padded data bounding box sits inside (pad covers the sampling band
    // beyond endpoints plus slack).
    const double side = cfg.extent_side();
    Extent extent{cfg.extent_origin, side};
    if (!cfg.has_extent_origin) {
        Vec3 lo = rays.front().origin, hi = rays.front().origin;
        auto grow = [&](const Vec3& p) {
            lo.x = std::min(lo.x, p.x); lo.y = std::min(lo.y, p.y); lo.z = std::min(lo.z, p.z);
            hi.x = std::max(hi.x, p.x); hi.y = std::max(hi.y, p.y); hi.z = std::max(hi.z, p.z);
        };
        for (const auto& r : rays) {
            grow(r.origin);
            grow(r.point_at(r.depth));
        }
        const double pad = cfg.tau + 0.5;
        if (hi.x - lo.x + 2 * pad > side || hi.y - lo.y + 2 * pad > side ||
            hi.z - lo.z + 2 * pad > side)
            throw InvalidConfig("scene does not fit the extent; increase l_max or leaf_res");
        extent.origin = {0.5 * (lo.x + hi.x) - 0.5 * side, 0.5 * (lo.y + hi.y) - 0.5 * side,
                         0.5 * (lo.z + hi.z) - 0.5 * side};
    }

    Rng rng(cfg.seed);
    TrainResult result{Model::init(cfg, extent, rng), OccupancyMask(extent.origin, cfg.mask_res)};
    Model& model = result.model;

    MlpGrads grads = model.mlp.make_grads();
    EvalScratch scratch;
    std::vector<TrainingSample> batch;
    batch.reserve(cfg.batch_rays * (cfg.ns + cfg.nf));

    for (std::uint64_t it = 1; it <= cfg.iterations; ++it) {
        batch.clear();
        for (std::uint64_t b = 0; b < cfg.batch_rays; ++b) {
            const Ray& ray = rays[rng.uniform_index(rays.size())];
            if (!(ray.depth > cfg.tau)) {
                ++result.degenerate_rays;
                continue;
            }
            sample_ray(ray, cfg, rng, batch);
        }
        for (const auto& s : batch) {
            result.mask.insert_point(s.p);
            if (sample_observer) sample_observer(s);
        }
        if (batch.empty()) continue;

        allocate_batch(model, batch, rng);
        grads.zero();
        result.final_loss = batch_pass(model, batch, &grads, scratch);
        apply_adam(model, grads);

        if (progress && (it % 200 == 0 || it == cfg.iterations))
            (*progress) << "iter " << it << "/" << cfg.iterations << "  loss " << result.final_loss
                        << "  features " << model.fps.parameter_count() << "\n";
    }

    result.mask.dilate();
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoint serialization. Little-endian throughout; the config block is the
// TrainConfig scalars in declaration order (u64 for integers, f64 for reals),
// then the extent, encoder frequencies, feature tables in ascending
// (plane, level, key) order, MLP layers, and the Adam step counter.
// Features are stored as f32, MLP weights as f64.
// ---------------------------------------------------------------------------

namespace detail {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

template <class T>
void wr(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T rd(std::istream& in, const char* what) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw ParseError(std::string("checkpoint truncated reading ") + what);
    return v;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[4] = {'3', 'Q', 'F', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const Model& model, const std::string& path) {
    using detail::wr;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot open checkpoint for writing: " + path);
    out.write(kCheckpointMagic, 4);
    wr(out, kCheckpointVersion);

    const TrainConfig& c = model.cfg;
    wr(out, c.ns); wr(out, c.nf);
    wr(out, c.tau); wr(out, c.tau_s);
    wr(out, c.batch_rays); wr(out, c.iterations);
    wr(out, c.lr_features); wr(out, c.lr_mlp); wr(out, c.beta1); wr(out, c.beta2);
    wr(out, c.adam_eps);
    wr(out, c.seed);
    wr(out, c.h); wr(out, c.l_max); wr(out, c.d); wr(out, c.m);
    wr(out, c.sigma2);
    wr(out, c.mlp_depth); wr(out, c.mlp_hidden);
    wr(out, c.leaf_res);
    wr(out, c.t_min); wr(out, c.max_range); wr(out, c.init_std); wr(out, c.mask_res);

    wr(out, model.extent.origin.x); wr(out, model.extent.origin.y);
    wr(out, model.extent.origin.z); wr(out, model.extent.side);

    wr(out, static_cast<std::uint32_t>(model.enc.m()));
    for (const double f : model.enc.frequencies()) wr(out, f);

    const int d = model.fps.d();
    for (int pi = 0; pi < 3; ++pi)
        for (int level = model.fps.level_min(); level <= model.fps.l_max(); ++level) {
            const auto plane = static_cast<Plane>(pi);
            const FeatureTable& tab = model.fps.table(plane, level);
            wr(out, static_cast<std::uint8_t>(pi));
            wr(out, static_cast<std::uint8_t>(level));
            wr(out, static_cast<std::uint64_t>(tab.size()));
            for (const auto& [key, slot] : tab.sorted_entries()) {
                wr(out, key);
                const double* f = &tab.feat[std::size_t{slot} * d];
                for (int j = 0; j < d; ++j) wr(out, static_cast<float>(f[j]));
            }
        }

    wr(out, static_cast<std::uint32_t>(model.mlp.layers().size()));
    for (const auto& ly : model.mlp.layers()) {
        wr(out, static_cast<std::uint32_t>(ly.rows));
        wr(out, static_cast<std::uint32_t>(ly.cols));
        for (const double w : ly.W) wr(out, w);
        for (const double b : ly.b) wr(out, b);
    }
    wr(out, model.mlp.step());
    if (!out) throw ParseError("failed writing checkpoint: " + path);
}

inline Model load_checkpoint(const std::string& path) {
    using detail::rd;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw ParseError(path + ": not a checkpoint (bad magic)");
    if (rd<std::uint32_t>(in, "version") != kCheckpointVersion)
        throw ParseError(path + ": unsupported checkpoint version");

    TrainConfig c;
    c.ns = rd<std::uint64_t>(in, "ns"); c.nf = rd<std::uint64_t>(in, "nf");
    c.tau = rd<double>(in, "tau"); c.tau_s = rd<double>(in, "tau_s");
    c.batch_rays = rd<std::uint64_t>(in, "batch_rays");
    c.iterations = rd<std::uint64_t>(in, "iterations");
    c.lr_features = rd<double>(in, "lr_features"); c.lr_mlp = rd<double>(in, "lr_mlp");
    c.beta1 = rd<double>(in, "beta1"); c.beta2 = rd<double>(in, "beta2");
    c.adam_eps = rd<double>(in, "adam_eps");
    c.seed = rd<std::uint64_t>(in, "seed");
    c.h = rd<std::uint64_t>(in, "h"); c.l_max = rd<std::uint64_t>(in, "l_max");
    c.d = rd<std::uint64_t>(in, "d"); c.m = rd<std::uint64_t>(in, "m");
    c.sigma2 = rd<double>(in, "sigma2");
    c.mlp_depth = rd<std::uint64_t>(in, "mlp_depth");
    c.mlp_hidden = rd<std::uint64_t>(in, "mlp_hidden");
    c.leaf_res = rd<double>(in, "leaf_res");
    c.t_min = rd<double>(in, "t_min"); c.max_range = rd<double>(in, "max_range");
    c.init_std = rd<double>(in, "init_std"); c.mask_res = rd<double>(in, "mask_res");
    c.validate();

    Model model;
    model.cfg = c;
    model.extent.origin.x = rd<double>(in, "extent");
    model.extent.origin.y = rd<double>(in, "extent");
    model.extent.origin.z = rd<double>(in, "extent");
    model.extent.side = rd<double>(in, "extent");

    const auto m_count = rd<std::uint32_t>(in, "frequency count");
    if (m_count != c.m) throw ParseError(path + ": frequency count disagrees with config");
    std::vector<double> freqs(m_count);
    for (auto& f : freqs) f = rd<double>(in, "frequency");
    model.enc = PositionalEncoder::from_frequencies(std::move(freqs));

    model.fps = FeaturePlaneSet(model.extent, static_cast<int>(c.d), static_cast<int>(c.h),
                                static_cast<int>(c.l_max));
    std::vector<double> feat(c.d);
    for (int pi = 0; pi < 3; ++pi)
        for (int level = model.fps.level_min(); level <= model.fps.l_max(); ++level) {
            const auto plane_tag = rd<std::uint8_t>(in, "plane tag");
            const auto level_tag = rd<std::uint8_t>(in, "level tag");
            if (plane_tag != pi || level_tag != level)
                throw ParseError(path + ": feature table out of order");
            const auto count = rd<std::uint64_t>(in, "table size");
            for (std::uint64_t e = 0; e < count; ++e) {
                const auto key = rd<std::uint64_t>(in, "vertex key");
                for (auto& f : feat)
                    f = static_cast<double>(rd<float>(in, "feature value"));
                model.fps.insert_raw(static_cast<Plane>(pi), level, key, feat.data());
            }
        }

    const auto layer_count = rd<std::uint32_t>(in, "layer count");
    auto& layers = model.mlp.layers();
    layers.resize(layer_count);
    int expect_cols = model.cfg.input_dim();
    for (auto& ly : layers) {
        ly.rows = static_cast<int>(rd<std::uint32_t>(in, "layer rows"));
        ly.cols = static_cast<int>(rd<std::uint32_t>(in, "layer cols"));
        if (ly.cols != expect_cols)
            throw ParseError(path + ": MLP layer shape mismatch");
        expect_cols = ly.rows;
        ly.W.resize(std::size_t(ly.rows) * ly.cols);
        ly.b.resize(ly.rows);
        for (auto& w : ly.W) w = rd<double>(in, "weight");
        for (auto& b : ly.b) b = rd<double>(in, "bias");
        ly.mW.assign(ly.W.size(), 0.0);
        ly.vW.assign(ly.W.size(), 0.0);
        ly.mb.assign(ly.b.size(), 0.0);
        ly.vb.assign(ly.b.size(), 0.0);
    }
    if (layer_count == 0 || layers.back().rows != 1)
        throw ParseError(path + ": MLP must end in a scalar head");
    model.mlp.set_step(rd<std::uint64_t>(in, "step counter"));

    char extra;
    if (in.read(&extra, 1)) throw ParseError(path + ": trailing bytes after checkpoint");
    return model;
}

}  // namespace triq
