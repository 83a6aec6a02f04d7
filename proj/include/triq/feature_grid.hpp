#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <unordered_map>
#include <utility>
#include <vector>

#include "triq/geometry.hpp"
#include "triq/optim.hpp"
#include "triq/rng.hpp"

namespace triq {

// ---------------------------------------------------------------------------
// Morton codes. 2D vertex indices (ix, iy), each up to 32 bits, interleave
// into one 64-bit key: ix occupies even bit positions, iy odd ones.
// ---------------------------------------------------------------------------

inline std::uint64_t morton_spread(std::uint32_t x) {
    std::uint64_t v = x;
    v = (v | (v << 16)) & 0x0000FFFF0000FFFFull;
    v = (v | (v << 8)) & 0x00FF00FF00FF00FFull;
    v = (v | (v << 4)) & 0x0F0F0F0F0F0F0F0Full;
    v = (v | (v << 2)) & 0x3333333333333333ull;
    v = (v | (v << 1)) & 0x5555555555555555ull;
    return v;
}

inline std::uint32_t morton_compact(std::uint64_t v) {
    v &= 0x5555555555555555ull;
    v = (v | (v >> 1)) & 0x3333333333333333ull;
    v = (v | (v >> 2)) & 0x0F0F0F0F0F0F0F0Full;
    v = (v | (v >> 4)) & 0x00FF00FF00FF00FFull;
    v = (v | (v >> 8)) & 0x0000FFFF0000FFFFull;
    v = (v | (v >> 16)) & 0x00000000FFFFFFFFull;
    return static_cast<std::uint32_t>(v);
}

inline std::uint64_t morton_encode(std::uint32_t ix, std::uint32_t iy) {
    return morton_spread(ix) | (morton_spread(iy) << 1);
}

inline std::pair<std::uint32_t, std::uint32_t> morton_decode(std::uint64_t key) {
    return {morton_compact(key), morton_compact(key >> 1)};
}

// ---------------------------------------------------------------------------
// Sparse per-(plane, level) vertex store. Feature vectors live in flat
// contiguous arrays indexed by allocation slot; the hash map only resolves
// Morton key -> slot. Gradients and Adam moments are slot-parallel arrays.
// ---------------------------------------------------------------------------

struct FeatureTable {
    std::unordered_map<std::uint64_t, std::uint32_t> index;  // morton key -> slot
    std::vector<double> feat;   // slot-major, d doubles per vertex
    std::vector<double> grad;   // accumulated batch gradient, same layout
    std::vector<double> adam_m;
    std::vector<double> adam_v;
    std::vector<std::uint32_t> touched;      // slots hit by the current batch
    std::vector<std::uint8_t> touched_flag;  // per-slot dedup for `touched`

    std::size_t size() const { return index.size(); }

    // Entries in ascending key order; allocation order is hash-dependent in
    // layout but serialization must be byte-stable, so sort on demand.
    std::vector<std::pair<std::uint64_t, std::uint32_t>> sorted_entries() const {
        std::vector<std::pair<std::uint64_t, std::uint32_t>> v(index.begin(), index.end());
        std::sort(v.begin(), v.end());
        return v;
    }
};

// Bilinear footprint of one query: for every (level, plane) cell the four
// vertex keys and weights, recorded whether or not the vertex exists, so the
// trainer can allocate missing ones and route gradients.
struct InterpRecord {
    struct Cell {
        std::array<std::uint64_t, 4> keys;
        std::array<double, 4> w;
    };
    // Indexed [level_idx * 3 + plane]; level_idx 0 is the coarsest kept level.
    std::vector<Cell> cells;
};

// Three planar quadtrees with learnable features at the deepest `h` levels.
// A query point projects onto the XY/XZ/YZ planes; per level the three
// bilinear interpolations sum, and levels concatenate into a d*h vector.
class FeaturePlaneSet {
public:
    FeaturePlaneSet() = default;

    FeaturePlaneSet(const Extent& extent, int d, int h, int l_max)
        : extent_(extent), d_(d), h_(h), l_max_(l_max), tables_(3 * h) {
        if (d < 1 || h < 1 || l_max < 0 || h > l_max + 1 || l_max > 30)
            throw InvalidConfig("bad feature grid shape: d=" + std::to_string(d) +
                                " h=" + std::to_string(h) + " l_max=" + std::to_string(l_max));
    }

    const Extent& extent() const { return extent_; }
    int d() const { return d_; }
    int h() const { return h_; }
    int l_max() const { return l_max_; }
    int level_min() const { return l_max_ - h_ + 1; }
    int feature_dim() const { return d_ * h_; }

    // Tables in canonical (plane, level) ascending order.
    FeatureTable& table(Plane plane, int level) {
        return tables_[static_cast<int>(plane) * h_ + (level - level_min())];
    }
    const FeatureTable& table(Plane plane, int level) const {
        return tables_[static_cast<int>(plane) * h_ + (level - level_min())];
    }

    // Ensure all vertices whose bilinear weights touch p exist, drawing fresh
    // features from N(0, init_std^2). Creation order is fixed (level-major,
    // then plane, then the 00/10/01/11 vertex order) so the rng stream — and
    // with it every checkpoint byte — is reproducible.
    void allocate_for_point(const Vec3& p, double init_std, Rng& rng) {
        if (!extent_.contains(p))
            throw OutOfExtent("allocate_for_point: point outside extent");
        const auto proj = project_to_planes(p);
        for (int level = level_min(); level <= l_max_; ++level) {
            for (int pi = 0; pi < 3; ++pi) {
                const auto plane = static_cast<Plane>(pi);
                const CellCoord c = locate_cell(extent_, plane, level, proj[pi]);
                FeatureTable& tab = table(plane, level);
                for (const std::uint64_t key : cell_vertex_keys(c))
                    if (tab.index.find(key) == tab.index.end()) {
                        const auto slot = static_cast<std::uint32_t>(tab.size());
                        tab.index.emplace(key, slot);
                        for (int j = 0; j < d_; ++j) tab.feat.push_back(rng.normal(0.0, init_std));
                        tab.grad.resize(tab.feat.size(), 0.0);
                        tab.adam_m.resize(tab.feat.size(), 0.0);
                        tab.adam_v.resize(tab.feat.size(), 0.0);
                        tab.touched_flag.push_back(0);
                    }
            }
        }
    }

    // Insert a vertex with explicit feature values (checkpoint loading).
    void insert_raw(Plane plane, int level, std::uint64_t key, const double* values) {
        FeatureTable& tab = table(plane, level);
        const auto slot = static_cast<std::uint32_t>(tab.size());
        tab.index.emplace(key, slot);
        tab.feat.insert(tab.feat.end(), values, values + d_);
        tab.grad.resize(tab.feat.size(), 0.0);
        tab.adam_m.resize(tab.feat.size(), 0.0);
        tab.adam_v.resize(tab.feat.size(), 0.0);
        tab.touched_flag.push_back(0);
    }

    // Bilinear feature of one plane at one level. Adds into out[0..d).
    // Missing vertices contribute zero. If `cell_rec` is non-null the four
    // keys/weights are recorded for allocation and gradient routing.
    void query_level_feature(Plane plane, int level, const Vec2& q, double* out,
                             InterpRecord::Cell* cell_rec) const {
        const CellCoord c = locate_cell(extent_, plane, level, q);
        const auto keys = cell_vertex_keys(c);
        const std::array<double, 4> w = {(1.0 - c.u) * (1.0 - c.v), c.u * (1.0 - c.v),
                                         (1.0 - c.u) * c.v, c.u * c.v};
        const FeatureTable& tab = table(plane, level);
        for (int k = 0; k < 4; ++k) {
            if (cell_rec) {
                cell_rec->keys[k] = keys[k];
                cell_rec->w[k] = w[k];
            }
            const auto it = tab.index.find(keys[k]);
            if (it == tab.index.end()) continue;
            const double* f = &tab.feat[std::size_t{it->second} * d_];
            for (int j = 0; j < d_; ++j) out[j] += w[k] * f[j];
        }
    }

    // Full multi-level feature V(p): levels ascend from level_min() to l_max,
    // each level slice the sum of the three plane interpolations. `out` must
    // hold feature_dim() doubles; it is overwritten.
    void query_point_feature(const Vec3& p, double* out, InterpRecord* rec = nullptr) const {
        std::fill(out, out + feature_dim(), 0.0);
        if (rec) rec->cells.resize(std::size_t{3} * h_);
        const auto proj = project_to_planes(p);
        for (int li = 0; li < h_; ++li) {
            double* slice = out + std::size_t(li) * d_;
            for (int pi = 0; pi < 3; ++pi) {
                InterpRecord::Cell* cr = rec ? &rec->cells[std::size_t(li) * 3 + pi] : nullptr;
                query_level_feature(static_cast<Plane>(pi), level_min() + li, proj[pi], slice, cr);
            }
        }
    }

    // Scatter dL/dV back onto the recorded vertices. Because planes sum, each
    // plane receives the full level slice scaled by its own bilinear weight.
    void accumulate_gradient(const InterpRecord& rec, const double* dV) {
        for (int li = 0; li < h_; ++li) {
            const double* g = dV + std::size_t(li) * d_;
            for (int pi = 0; pi < 3; ++pi) {
                const auto& cell = rec.cells[std::size_t(li) * 3 + pi];
                FeatureTable& tab = table(static_cast<Plane>(pi), level_min() + li);
                for (int k = 0; k < 4; ++k) {
                    const auto it = tab.index.find(cell.keys[k]);
                    if (it == tab.index.end())
                        throw UnknownVertex("gradient routed to unallocated vertex");
                    const std::uint32_t slot = it->second;
                    double* gd = &tab.grad[std::size_t{slot} * d_];
                    for (int j = 0; j < d_; ++j) gd[j] += cell.w[k] * g[j];
                    if (!tab.touched_flag[slot]) {
                        tab.touched_flag[slot] = 1;
                        tab.touched.push_back(slot);
                    }
                }
            }
        }
    }

    // Adam over every vertex touched since the last step; clears gradients
    // and touch marks. Untouched vertices are left alone (sparse semantics).
    void adam_step(const AdamConfig& cfg, std::uint64_t t) {
        for (auto& tab : tables_) {
            for (const std::uint32_t slot : tab.touched) {
                const std::size_t off = std::size_t{slot} * d_;
                adam_update(&tab.feat[off], &tab.grad[off], &tab.adam_m[off], &tab.adam_v[off],
                            d_, cfg, t);
                std::fill(&tab.grad[off], &tab.grad[off] + d_, 0.0);
                tab.touched_flag[slot] = 0;
            }
            tab.touched.clear();
        }
    }

    void zero_gradients() {
        for (auto& tab : tables_) {
            for (const std::uint32_t slot : tab.touched) {
                const std::size_t off = std::size_t{slot} * d_;
                std::fill(&tab.grad[off], &tab.grad[off] + d_, 0.0);
                tab.touched_flag[slot] = 0;
            }
            tab.touched.clear();
        }
    }

    std::size_t vertex_count() const {
        std::size_t n = 0;
        for (const auto& t : tables_) n += t.size();
        return n;
    }

    // Learnable feature scalar count: vertices x d.
    std::size_t parameter_count() const { return vertex_count() * d_; }

    const std::vector<FeatureTable>& tables() const { return tables_; }

private:
    static std::array<std::uint64_t, 4> cell_vertex_keys(const CellCoord& c) {
        const auto x0 = static_cast<std::uint32_t>(c.ix);
        const auto y0 = static_cast<std::uint32_t>(c.iy);
        return {morton_encode(x0, y0), morton_encode(x0 + 1, y0), morton_encode(x0, y0 + 1),
                morton_encode(x0 + 1, y0 + 1)};
    }

    Extent extent_;
    int d_ = 0, h_ = 0, l_max_ = 0;
    std::vector<FeatureTable> tables_;  // index = plane * h + (level - level_min)
};

}  // namespace triq
