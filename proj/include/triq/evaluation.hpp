#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <unordered_map>
#include <vector>

#include "triq/errors.hpp"
#include "triq/geometry.hpp"
#include "triq/meshing.hpp"
#include "triq/rng.hpp"

namespace triq {

// Area-weighted uniform surface samples. Each sample consumes exactly three
// uniforms: face pick via CDF binary search, then two barycentric coordinates
// (reflected when u + v > 1). Zero-area faces are never selected.
inline std::vector<Vec3> sample_mesh_surface(const TriangleMesh& mesh, std::size_t n, Rng& rng) {
    if (mesh.faces.empty()) throw InvalidConfig("cannot sample an empty mesh");
    std::vector<double> cdf(mesh.faces.size());
    double total = 0.0;
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        const Vec3& a = mesh.vertices[mesh.faces[f][0]];
        const Vec3& b = mesh.vertices[mesh.faces[f][1]];
        const Vec3& c = mesh.vertices[mesh.faces[f][2]];
        total += 0.5 * cross(b - a, c - a).norm();
        cdf[f] = total;
    }
    if (!(total > 0.0)) throw InvalidConfig("mesh has zero surface area");

    std::vector<Vec3> samples;
    samples.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double r = rng.uniform01() * total;
        const std::size_t f =
            std::lower_bound(cdf.begin(), cdf.end(), r) - cdf.begin();
        const auto& face = mesh.faces[std::min(f, mesh.faces.size() - 1)];
        double u = rng.uniform01();
        double v = rng.uniform01();
        if (u + v > 1.0) {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        const Vec3& a = mesh.vertices[face[0]];
        const Vec3& b = mesh.vertices[face[1]];
        const Vec3& c = mesh.vertices[face[2]];
        samples.push_back(a + u * (b - a) + v * (c - a));
    }
    return samples;
}

namespace detail {

// Spatial hash over reference points for exact nearest-neighbor queries.
// Cells are cubes of side h; lookup expands Chebyshev rings around the
// query's cell, clamped into the occupied cell box so the walk is bounded by
// the box span even when the query lies far outside it. With delta the
// Chebyshev cell distance moved by the clamp, any point in ring k' around
// the clamped cell lies at distance >= (k' - delta - 1) * h from the query,
// so once d_best <= (k - delta) * h after finishing ring k, no farther ring
// can improve it. The k_cap fallback guarantees every occupied cell is
// visited even when that bound never fires.
class PointHash {
public:
    PointHash(const std::vector<Vec3>& points, double h, const Vec3& lo)
        : points_(points), h_(h), lo_(lo) {
        for (std::uint32_t i = 0; i < points.size(); ++i)
            cells_[key(cell_of(points[i]))].push_back(i);
        max_cell_ = {0, 0, 0};
        for (const auto& p : points) {
            const auto c = cell_of(p);
            max_cell_[0] = std::max(max_cell_[0], c[0]);
            max_cell_[1] = std::max(max_cell_[1], c[1]);
            max_cell_[2] = std::max(max_cell_[2], c[2]);
        }
    }

    double nearest_distance(const Vec3& q) const {
        const auto raw = cell_of(q);  // may lie far outside the occupied range
        std::array<long, 3> c;
        long delta = 0;
        for (int a = 0; a < 3; ++a) {
            c[a] = std::clamp(raw[a], long{0}, max_cell_[a]);
            delta = std::max(delta, std::labs(raw[a] - c[a]));
        }
        // Every occupied cell is within k_cap rings of the clamped start.
        long k_cap = 0;
        for (int a = 0; a < 3; ++a) {
            k_cap = std::max(k_cap, c[a]);
            k_cap = std::max(k_cap, max_cell_[a] - c[a]);
        }
        double best_sq = std::numeric_limits<double>::infinity();
        for (long k = 0; k <= k_cap; ++k) {
            visit_ring(c, k, q, best_sq);
            const double safe = static_cast<double>(k - delta) * h_;
            if (safe >= 0.0 && best_sq <= safe * safe) break;
        }
        return std::sqrt(best_sq);
    }

private:
    std::array<long, 3> cell_of(const Vec3& p) const {
        return {static_cast<long>(std::floor((p.x - lo_.x) / h_)),
                static_cast<long>(std::floor((p.y - lo_.y) / h_)),
                static_cast<long>(std::floor((p.z - lo_.z) / h_))};
    }
    static std::uint64_t key(const std::array<long, 3>& c) {
        // Occupied cells are non-negative and bounded well under 2^21.
        return static_cast<std::uint64_t>(c[0]) |
               (static_cast<std::uint64_t>(c[1]) << 21) |
               (static_cast<std::uint64_t>(c[2]) << 42);
    }

    void scan_cell(long i, long j, long k, const Vec3& q, double& best_sq) const {
        if (i < 0 || j < 0 || k < 0 || i > max_cell_[0] || j > max_cell_[1] || k > max_cell_[2])
            return;
        const auto it = cells_.find(key({i, j, k}));
        if (it == cells_.end()) return;
        for (const std::uint32_t idx : it->second) {
            const Vec3 d = points_[idx] - q;
            best_sq = std::min(best_sq, dot(d, d));
        }
    }

    // All cells with Chebyshev distance exactly k from c, each visited once.
    void visit_ring(const std::array<long, 3>& c, long k, const Vec3& q, double& best_sq) const {
        if (k == 0) {
            scan_cell(c[0], c[1], c[2], q, best_sq);
            return;
        }
        for (const long dx : {-k, k})
            for (long dy = -k; dy <= k; ++dy)
                for (long dz = -k; dz <= k; ++dz)
                    scan_cell(c[0] + dx, c[1] + dy, c[2] + dz, q, best_sq);
        for (const long dy : {-k, k})
            for (long dx = -k + 1; dx <= k - 1; ++dx)
                for (long dz = -k; dz <= k; ++dz)
                    scan_cell(c[0] + dx, c[1] + dy, c[2] + dz, q, best_sq);
        for (const long dz : {-k, k})
            for (long dx = -k + 1; dx <= k - 1; ++dx)
                for (long dy = -k + 1; dy <= k - 1; ++dy)
                    scan_cell(c[0] + dx, c[1] + dy, c[2] + dz, q, best_sq);
    }

    const std::vector<Vec3>& points_;
    double h_;
    Vec3 lo_;
    std::array<long, 3> max_cell_;
    std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> cells_;
};

}  // namespace detail

// Exact distance from each query point to its nearest reference point.
inline std::vector<double> nearest_distances(const std::vector<Vec3>& queries,
                                             const std::vector<Vec3>& reference) {
    if (reference.empty()) throw InvalidConfig("nearest_distances: empty reference set");
    Vec3 lo = reference.front(), hi = reference.front();
    for (const auto& p : reference) {
        lo.x = std::min(lo.x, p.x); lo.y = std::min(lo.y, p.y); lo.z = std::min(lo.z, p.z);
        hi.x = std::max(hi.x, p.x); hi.y = std::max(hi.y, p.y); hi.z = std::max(hi.z, p.z);
    }
    const double max_dim = std::max({hi.x - lo.x, hi.y - lo.y, hi.z - lo.z});
    // Aim for a handful of points per occupied cell; keep the occupied cell
    // range comfortably inside the 21-bit packing budget.
    double h = max_dim / std::cbrt(static_cast<double>(reference.size()));
    h = std::max({h, max_dim / 1e5, 1e-9});
    detail::PointHash hash(reference, h, lo);

    std::vector<double> out;
    out.reserve(queries.size());
    for (const auto& q : queries) out.push_back(hash.nearest_distance(q));
    return out;
}

// Reconstruction quality of a mesh against ground-truth surface points.
// Accuracy: mean distance from mesh surface samples to the ground truth.
// Completion: mean distance from ground-truth points to mesh samples.
// Ratios count distances strictly below the threshold.
struct Metrics {
    double accuracy_m = 0.0;
    double completion_m = 0.0;
    double accuracy_ratio = 0.0;    // fraction of mesh samples within threshold
    double completion_ratio = 0.0;  // fraction of ground truth within threshold
    std::size_t mesh_samples = 0;
    std::size_t gt_points = 0;
};

inline Metrics compute_metrics(const std::vector<Vec3>& mesh_samples,
                               const std::vector<Vec3>& gt_points, double threshold) {
    if (mesh_samples.empty()) throw InvalidConfig("compute_metrics: no mesh samples");
    if (gt_points.empty()) throw InvalidConfig("compute_metrics: no ground-truth points");
    if (!(threshold > 0.0)) throw InvalidConfig("compute_metrics: threshold must be positive");

    const std::vector<double> acc = nearest_distances(mesh_samples, gt_points);
    const std::vector<double> comp = nearest_distances(gt_points, mesh_samples);

    auto summarize = [threshold](const std::vector<double>& ds, double& mean, double& ratio) {
        double sum = 0.0;
        std::size_t within = 0;
        for (const double d : ds) {
            sum += d;
            if (d < threshold) ++within;
        }
        mean = sum / static_cast<double>(ds.size());
        ratio = static_cast<double>(within) / static_cast<double>(ds.size());
    };

    Metrics m;
    m.mesh_samples = mesh_samples.size();
    m.gt_points = gt_points.size();
    summarize(acc, m.accuracy_m, m.accuracy_ratio);
    summarize(comp, m.completion_m, m.completion_ratio);
    return m;
}

}  // namespace triq
