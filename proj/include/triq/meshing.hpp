#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "triq/geometry.hpp"
#include "triq/mc_tables.hpp"
#include "triq/ply_detail.hpp"

namespace triq {

// ---------------------------------------------------------------------------
// Occupancy mask: coarse 3D hash of cells touched by training samples. The
// planar quadtrees lose 3D occupancy, so surface extraction is restricted to
// cells the training data actually visited (dilated once to close node gaps).
// ---------------------------------------------------------------------------

class OccupancyMask {
public:
    OccupancyMask() = default;
    OccupancyMask(const Vec3& origin, double cell) : origin_(origin), cell_(cell) {
        if (!(cell > 0.0)) throw InvalidConfig("occupancy mask: cell size must be positive");
    }

    const Vec3& origin() const { return origin_; }
    double cell_size() const { return cell_; }
    std::size_t size() const { return cells_.size(); }
    bool empty() const { return cells_.empty(); }

    std::array<std::int64_t, 3> cell_of(const Vec3& p) const {
        return {static_cast<std::int64_t>(std::floor((p.x - origin_.x) / cell_)),
                static_cast<std::int64_t>(std::floor((p.y - origin_.y) / cell_)),
                static_cast<std::int64_t>(std::floor((p.z - origin_.z) / cell_))};
    }

    void insert_point(const Vec3& p) {
        const auto c = cell_of(p);
        cells_.insert(pack(c[0], c[1], c[2]));
    }

    bool contains_point(const Vec3& p) const {
        const auto c = cell_of(p);
        return cells_.count(pack(c[0], c[1], c[2])) != 0;
    }

    // Morphological dilation by one cell (3x3x3 structuring element).
    void dilate() {
        std::unordered_set<std::uint64_t> grown;
        grown.reserve(cells_.size() * 4);
        for (const std::uint64_t key : cells_) {
            const auto [x, y, z] = unpack(key);
            for (int dz = -1; dz <= 1; ++dz)
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) grown.insert(pack(x + dx, y + dy, z + dz));
        }
        cells_ = std::move(grown);
    }

    // Cell-index bounding box; only meaningful when !empty().
    void cell_bounds(std::array<std::int64_t, 3>& lo, std::array<std::int64_t, 3>& hi) const {
        lo = {INT64_MAX, INT64_MAX, INT64_MAX};
        hi = {INT64_MIN, INT64_MIN, INT64_MIN};
        for (const std::uint64_t key : cells_) {
            const auto c = unpack(key);
            for (int a = 0; a < 3; ++a) {
                lo[a] = std::min(lo[a], c[a]);
                hi[a] = std::max(hi[a], c[a]);
            }
        }
    }

    // Sidecar serialization (magic "3QMK"). Keys are written sorted so the
    // bytes only depend on the set contents.
    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw ParseError("cannot open mask file for writing: " + path);
        out.write("3QMK", 4);
        const std::uint32_t version = 1;
        write_pod(out, version);
        write_pod(out, cell_);
        write_pod(out, origin_.x);
        write_pod(out, origin_.y);
        write_pod(out, origin_.z);
        std::vector<std::uint64_t> keys(cells_.begin(), cells_.end());
        std::sort(keys.begin(), keys.end());
        write_pod(out, static_cast<std::uint64_t>(keys.size()));
        for (const auto k : keys) write_pod(out, k);
        if (!out) throw ParseError("failed writing mask file: " + path);
    }

    static OccupancyMask load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw ParseError("cannot open mask file: " + path);
        char magic[4];
        in.read(magic, 4);
        if (!in || std::memcmp(magic, "3QMK", 4) != 0)
            throw ParseError(path + ": not a mask file (bad magic)");
        const auto version = read_pod<std::uint32_t>(in, path);
        if (version != 1) throw ParseError(path + ": unsupported mask version");
        OccupancyMask m;
        m.cell_ = read_pod<double>(in, path);
        m.origin_.x = read_pod<double>(in, path);
        m.origin_.y = read_pod<double>(in, path);
        m.origin_.z = read_pod<double>(in, path);
        const auto n = read_pod<std::uint64_t>(in, path);
        m.cells_.reserve(n);
        for (std::uint64_t i = 0; i < n; ++i) m.cells_.insert(read_pod<std::uint64_t>(in, path));
        return m;
    }

private:
    // 21 bits per axis, offset so moderately negative indices (from dilation
    // at the extent boundary) stay packable.
    static constexpr std::int64_t kOffset = std::int64_t{1} << 20;
    static constexpr std::int64_t kRange = std::int64_t{1} << 21;

    static std::uint64_t pack(std::int64_t x, std::int64_t y, std::int64_t z) {
        const std::int64_t px = x + kOffset, py = y + kOffset, pz = z + kOffset;
        if (px < 0 || px >= kRange || py < 0 || py >= kRange || pz < 0 || pz >= kRange)
            throw InvalidConfig("occupancy mask: cell index out of packable range");
        return (static_cast<std::uint64_t>(pz) << 42) | (static_cast<std::uint64_t>(py) << 21) |
               static_cast<std::uint64_t>(px);
    }
    static std::array<std::int64_t, 3> unpack(std::uint64_t key) {
        return {static_cast<std::int64_t>(key & (kRange - 1)) - kOffset,
                static_cast<std::int64_t>((key >> 21) & (kRange - 1)) - kOffset,
                static_cast<std::int64_t>((key >> 42) & (kRange - 1)) - kOffset};
    }

    template <class T>
    static void write_pod(std::ofstream& out, const T& v) {
        out.write(reinterpret_cast<const char*>(&v), sizeof(T));
    }
    template <class T>
    static T read_pod(std::ifstream& in, const std::string& path) {
        T v;
        in.read(reinterpret_cast<char*>(&v), sizeof(T));
        if (!in) throw ParseError(path + ": truncated mask file");
        return v;
    }

    Vec3 origin_;
    double cell_ = 0.1;
    std::unordered_set<std::uint64_t> cells_;
};

// ---------------------------------------------------------------------------
// Regular SDF sample grid over the mask's bounding box.
// ---------------------------------------------------------------------------

struct SdfGrid {
    Vec3 origin;       // world position of node (0, 0, 0)
    double res = 0.1;  // node spacing
    int nx = 0, ny = 0, nz = 0;  // node counts per axis
    std::vector<double> values;  // node-major, x fastest
    std::vector<std::uint8_t> valid;

    std::size_t idx(int i, int j, int k) const {
        return (static_cast<std::size_t>(k) * ny + j) * nx + i;
    }
    Vec3 node_pos(int i, int j, int k) const {
        return {origin.x + res * i, origin.y + res * j, origin.z + res * k};
    }
};

// Evaluate `sdf` on a grid of spacing `resolution` covering the mask. Nodes
// outside the mask are invalid; the functor may throw OutOfExtent, which also
// marks the node invalid. An empty mask yields an empty grid.
template <class SdfFn>
SdfGrid evaluate_sdf_grid(SdfFn&& sdf, const OccupancyMask& mask, double resolution) {
    if (!(resolution > 0.0)) throw InvalidConfig("evaluate_sdf_grid: resolution must be positive");
    SdfGrid grid;
    grid.res = resolution;
    if (mask.empty()) return grid;

    std::array<std::int64_t, 3> lo, hi;
    mask.cell_bounds(lo, hi);
    const double c = mask.cell_size();
    const Vec3 wlo = {mask.origin().x + c * lo[0], mask.origin().y + c * lo[1],
                      mask.origin().z + c * lo[2]};
    const Vec3 whi = {mask.origin().x + c * (hi[0] + 1), mask.origin().y + c * (hi[1] + 1),
                      mask.origin().z + c * (hi[2] + 1)};
    grid.origin = wlo;
    grid.nx = static_cast<int>(std::ceil((whi.x - wlo.x) / resolution)) + 1;
    grid.ny = static_cast<int>(std::ceil((whi.y - wlo.y) / resolution)) + 1;
    grid.nz = static_cast<int>(std::ceil((whi.z - wlo.z) / resolution)) + 1;

    const std::size_t n = static_cast<std::size_t>(grid.nx) * grid.ny * grid.nz;
    grid.values.assign(n, std::numeric_limits<double>::quiet_NaN());
    grid.valid.assign(n, 0);
    for (int k = 0; k < grid.nz; ++k)
        for (int j = 0; j < grid.ny; ++j)
            for (int i = 0; i < grid.nx; ++i) {
                const Vec3 p = grid.node_pos(i, j, k);
                if (!mask.contains_point(p)) continue;
                const std::size_t at = grid.idx(i, j, k);
                try {
                    grid.values[at] = sdf(p);
                    grid.valid[at] = 1;
                } catch (const OutOfExtent&) {
                    // leave invalid
                }
            }
    return grid;
}

// ---------------------------------------------------------------------------
// Marching cubes.
// ---------------------------------------------------------------------------

struct TriangleMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<std::int32_t, 3>> faces;
};

// Extract the iso-surface from the grid. Cells with any invalid corner emit
// nothing. Vertices are deduplicated per grid edge, so shared cell faces
// share vertices. Triangles are wound so that normals point toward values
// greater than iso (for the training sign convention — free space negative,
// behind the surface positive — normals face away from the sensor side).
inline TriangleMesh marching_cubes(const SdfGrid& grid, double iso = 0.0) {
    // Corner layout (Lorensen/Bourke): 0..3 cycle the z=0 face, 4..7 the
    // z=1 face; corner bit set when value < iso.
    static constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                                          {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
    static constexpr int kEdge[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                                         {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

    TriangleMesh mesh;
    if (grid.nx < 2 || grid.ny < 2 || grid.nz < 2) return mesh;
    std::unordered_map<std::uint64_t, std::int32_t> edge_vertex;

    for (int k = 0; k + 1 < grid.nz; ++k)
        for (int j = 0; j + 1 < grid.ny; ++j)
            for (int i = 0; i + 1 < grid.nx; ++i) {
                double f[8];
                bool ok = true;
                for (int c = 0; c < 8 && ok; ++c) {
                    const std::size_t at =
                        grid.idx(i + kCorner[c][0], j + kCorner[c][1], k + kCorner[c][2]);
                    ok = grid.valid[at] != 0;
                    f[c] = grid.values[at];
                }
                if (!ok) continue;
                int caseidx = 0;
                for (int c = 0; c < 8; ++c)
                    if (f[c] < iso) caseidx |= 1 << c;
                const std::uint16_t edges = detail::kEdgeTable[caseidx];
                if (edges == 0) continue;

                std::int32_t ev[12];
                for (int e = 0; e < 12; ++e) {
                    if (!(edges & (1u << e))) continue;
                    const int ca = kEdge[e][0], cb = kEdge[e][1];
                    // Canonical global edge id: owning node + axis.
                    int ax[3] = {i + std::min(kCorner[ca][0], kCorner[cb][0]),
                                 j + std::min(kCorner[ca][1], kCorner[cb][1]),
                                 k + std::min(kCorner[ca][2], kCorner[cb][2])};
                    int axis = 0;
                    for (int a = 0; a < 3; ++a)
                        if (kCorner[ca][a] != kCorner[cb][a]) axis = a;
                    const std::uint64_t key =
                        static_cast<std::uint64_t>(grid.idx(ax[0], ax[1], ax[2])) * 3 + axis;
                    const auto it = edge_vertex.find(key);
                    if (it != edge_vertex.end()) {
                        ev[e] = it->second;
                        continue;
                    }
                    const double fa = f[ca], fb = f[cb];
                    double t = 0.5;
                    if (std::abs(fb - fa) > 1e-300) t = (iso - fa) / (fb - fa);
                    t = std::min(1.0, std::max(0.0, t));
                    const Vec3 pa = grid.node_pos(i + kCorner[ca][0], j + kCorner[ca][1],
                                                  k + kCorner[ca][2]);
                    const Vec3 pb = grid.node_pos(i + kCorner[cb][0], j + kCorner[cb][1],
                                                  k + kCorner[cb][2]);
                    const auto vid = static_cast<std::int32_t>(mesh.vertices.size());
                    mesh.vertices.push_back(pa + t * (pb - pa));
                    edge_vertex.emplace(key, vid);
                    ev[e] = vid;
                }

                const std::int8_t* tri = detail::kTriTable[caseidx];
                for (int t3 = 0; tri[t3] != -1; t3 += 3) {
                    // Table order gives normals toward the below-iso side;
                    // swap the last two to face the positive side instead.
                    mesh.faces.push_back({ev[tri[t3]], ev[tri[t3 + 2]], ev[tri[t3 + 1]]});
                }
            }
    return mesh;
}

// ---------------------------------------------------------------------------
// PLY mesh round-trip (binary little-endian, float vertices, int32 faces).
// ---------------------------------------------------------------------------

inline void export_mesh_ply(const TriangleMesh& mesh, const std::string& path) {
    static_assert(std::endian::native == std::endian::little, "little-endian host required");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot open mesh file for writing: " + path);
    out << "ply\nformat binary_little_endian 1.0\n"
        << "element vertex " << mesh.vertices.size() << "\n"
        << "property float x\nproperty float y\nproperty float z\n"
        << "element face " << mesh.faces.size() << "\n"
        << "property list uchar int vertex_indices\nend_header\n";
    for (const auto& v : mesh.vertices) {
        const float xyz[3] = {static_cast<float>(v.x), static_cast<float>(v.y),
                              static_cast<float>(v.z)};
        out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
    }
    for (const auto& face : mesh.faces) {
        const std::uint8_t n = 3;
        out.write(reinterpret_cast<const char*>(&n), 1);
        out.write(reinterpret_cast<const char*>(face.data()), 3 * sizeof(std::int32_t));
    }
    if (!out) throw ParseError("failed writing mesh file: " + path);
}

inline TriangleMesh import_mesh_ply(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open mesh file: " + path);
    const detail::PlyHeader header = detail::read_ply_header(in, path);

    TriangleMesh mesh;
    for (const auto& elem : header.elements) {
        const bool is_vertex = elem.name == "vertex";
        const bool is_face = elem.name == "face";
        int px = -1, py = -1, pz = -1, plist = -1;
        if (is_vertex) {
            for (std::size_t p = 0; p < elem.properties.size(); ++p) {
                const auto& prop = elem.properties[p];
                if (prop.is_list) continue;
                if (prop.name == "x") px = static_cast<int>(p);
                if (prop.name == "y") py = static_cast<int>(p);
                if (prop.name == "z") pz = static_cast<int>(p);
            }
            if (px < 0 || py < 0 || pz < 0)
                throw ParseError(path + ": vertex element lacks x/y/z");
            mesh.vertices.reserve(elem.count);
        }
        if (is_face) {
            for (std::size_t p = 0; p < elem.properties.size(); ++p)
                if (elem.properties[p].is_list &&
                    (elem.properties[p].name == "vertex_indices" ||
                     elem.properties[p].name == "vertex_index"))
                    plist = static_cast<int>(p);
            if (plist < 0) throw ParseError(path + ": face element lacks vertex index list");
            mesh.faces.reserve(elem.count);
        }

        for (std::size_t r = 0; r < elem.count; ++r) {
            Vec3 v;
            std::array<std::int32_t, 3> face{};
            for (std::size_t p = 0; p < elem.properties.size(); ++p) {
                const auto& prop = elem.properties[p];
                if (prop.is_list) {
                    const auto n = static_cast<std::size_t>(
                        header.binary ? detail::read_binary_scalar(in, prop.count_type, path)
                                      : detail::read_ascii_scalar(in, path));
                    if (is_face && static_cast<int>(p) == plist && n != 3)
                        throw ParseError(path + ": non-triangle face");
                    for (std::size_t e = 0; e < n; ++e) {
                        const double val = header.binary
                                               ? detail::read_binary_scalar(in, prop.type, path)
                                               : detail::read_ascii_scalar(in, path);
                        if (is_face && static_cast<int>(p) == plist)
                            face[e] = static_cast<std::int32_t>(val);
                    }
                } else {
                    const double val = header.binary
                                           ? detail::read_binary_scalar(in, prop.type, path)
                                           : detail::read_ascii_scalar(in, path);
                    if (is_vertex) {
                        if (static_cast<int>(p) == px) v.x = val;
                        if (static_cast<int>(p) == py) v.y = val;
                        if (static_cast<int>(p) == pz) v.z = val;
                    }
                }
            }
            if (is_vertex) mesh.vertices.push_back(v);
            if (is_face) mesh.faces.push_back(face);
        }
    }
    for (const auto& f : mesh.faces)
        for (const auto vi : f)
            if (vi < 0 || static_cast<std::size_t>(vi) >= mesh.vertices.size())
                throw ParseError(path + ": face references missing vertex");
    return mesh;
}

}  // namespace triq
