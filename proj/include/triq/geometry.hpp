#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>

#include "triq/errors.hpp"

namespace triq {

struct Vec2 {
    double x = 0.0, y = 0.0;
};

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }

    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm() const { return std::sqrt(dot(*this)); }
    Vec3 normalized() const { return *this / norm(); }

    double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
    double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }
inline double dot(const Vec3& a, const Vec3& b) { return a.dot(b); }
inline Vec3 cross(const Vec3& a, const Vec3& b) { return a.cross(b); }

// Row-major 3x3 matrix; only what poses need.
struct Mat3 {
    std::array<double, 9> a{1, 0, 0, 0, 1, 0, 0, 0, 1};

    double& operator()(int r, int c) { return a[3 * r + c]; }
    double operator()(int r, int c) const { return a[3 * r + c]; }

    Vec3 operator*(const Vec3& v) const {
        return {a[0] * v.x + a[1] * v.y + a[2] * v.z,
                a[3] * v.x + a[4] * v.y + a[5] * v.z,
                a[6] * v.x + a[7] * v.y + a[8] * v.z};
    }
    Mat3 operator*(const Mat3& m) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double s = 0.0;
                for (int k = 0; k < 3; ++k) s += (*this)(i, k) * m(k, j);
                r(i, j) = s;
            }
        return r;
    }
    Mat3 transposed() const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
        return r;
    }
    double det() const {
        return a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6]) +
               a[2] * (a[3] * a[7] - a[4] * a[6]);
    }

    static Mat3 identity() { return Mat3{}; }
    static Mat3 rot_z(double rad) {
        const double c = std::cos(rad), s = std::sin(rad);
        Mat3 r;
        r.a = {c, -s, 0, s, c, 0, 0, 0, 1};
        return r;
    }
    static Mat3 rot_x(double rad) {
        const double c = std::cos(rad), s = std::sin(rad);
        Mat3 r;
        r.a = {1, 0, 0, 0, c, -s, 0, s, c};
        return r;
    }
    static Mat3 rot_y(double rad) {
        const double c = std::cos(rad), s = std::sin(rad);
        Mat3 r;
        r.a = {c, 0, s, 0, 1, 0, -s, 0, c};
        return r;
    }
};

// Rigid body transform: p_world = R * p + t.
struct Pose {
    Mat3 R;
    Vec3 t;

    Vec3 apply(const Vec3& p) const { return R * p + t; }
    Pose inverse() const {
        Pose inv;
        inv.R = R.transposed();
        inv.t = (inv.R * t) * -1.0;
        return inv;
    }
};

inline Vec3 transform_point(const Pose& pose, const Vec3& p) { return pose.apply(p); }

// World-frame measurement ray: endpoint = origin + depth * dir, |dir| = 1.
struct Ray {
    Vec3 origin;
    Vec3 dir;
    double depth = 0.0;

    Vec3 point_at(double t) const { return origin + t * dir; }
};

// The three axis-aligned projection planes. Enum order is the canonical
// (serialization / iteration) order everywhere.
enum class Plane : std::uint8_t { XY = 0, XZ = 1, YZ = 2 };

inline const char* plane_name(Plane p) {
    switch (p) {
        case Plane::XY: return "XY";
        case Plane::XZ: return "XZ";
        case Plane::YZ: return "YZ";
    }
    return "?";
}

// Project a 3D point onto one plane (drop the complementary coordinate).
inline Vec2 project_point(Plane plane, const Vec3& p) {
    switch (plane) {
        case Plane::XY: return {p.x, p.y};
        case Plane::XZ: return {p.x, p.z};
        default: return {p.y, p.z};
    }
}

inline std::array<Vec2, 3> project_to_planes(const Vec3& p) {
    return {project_point(Plane::XY, p), project_point(Plane::XZ, p),
            project_point(Plane::YZ, p)};
}

// Cubic mapped region. side = leaf_res * 2^l_max by construction, so every
// quadtree level divides it evenly. A point is inside iff all coordinates lie
// in [origin, origin + side) — half-open, so the far faces are outside.
struct Extent {
    Vec3 origin;
    double side = 0.0;

    bool contains(const Vec3& p) const {
        return p.x >= origin.x && p.x - origin.x < side && p.y >= origin.y &&
               p.y - origin.y < side && p.z >= origin.z && p.z - origin.z < side;
    }
    Vec2 plane_origin(Plane plane) const { return project_point(plane, origin); }
};

// Integer cell coordinates plus the fractional position inside the cell.
struct CellCoord {
    std::int64_t ix = 0, iy = 0;
    double u = 0.0, v = 0.0;  // in [0, 1)
};

// Locate the level-`level` quadtree cell of plane-projected point q. Level l
// splits the extent's projection into 2^l x 2^l cells. Throws OutOfExtent if
// q falls outside the projected square.
inline CellCoord locate_cell(const Extent& extent, Plane plane, int level, const Vec2& q) {
    const Vec2 o = extent.plane_origin(plane);
    const double rx = q.x - o.x;
    const double ry = q.y - o.y;
    if (!(rx >= 0.0 && rx < extent.side && ry >= 0.0 && ry < extent.side))
        throw OutOfExtent("point (" + std::to_string(q.x) + ", " + std::to_string(q.y) +
                          ") outside extent projection " + plane_name(plane));
    const std::int64_t n = std::int64_t{1} << level;
    const double cell = extent.side / static_cast<double>(n);  // exact: side / 2^l
    CellCoord c;
    const double sx = rx / cell;
    const double sy = ry / cell;
    c.ix = std::min(static_cast<std::int64_t>(sx), n - 1);
    c.iy = std::min(static_cast<std::int64_t>(sy), n - 1);
    // Clamp guards the measure-zero case where rounding pushes the fraction
    // to exactly 1.0 at a cell's far edge.
    constexpr double below_one = 0x1.fffffffffffffp-1;
    c.u = std::min(sx - static_cast<double>(c.ix), below_one);
    c.v = std::min(sy - static_cast<double>(c.iy), below_one);
    return c;
}

}  // namespace triq
