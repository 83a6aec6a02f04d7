#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "triq/errors.hpp"
#include "triq/geometry.hpp"
#include "triq/io.hpp"
#include "triq/rng.hpp"

namespace triq {

// ---------------------------------------------------------------------------
// Scene description: a handful of analytic primitives, a sensor trajectory,
// and a scan pattern. Scenes load from JSON (see parse_scene_json) and the
// "room" scene is built in.
// ---------------------------------------------------------------------------

struct Primitive {
    enum class Kind : std::uint8_t { rect, box, sphere };
    Kind kind = Kind::box;
    Vec3 center;
    Vec3 half_extents;   // rect (one component zero) and box
    double radius = 0.0; // sphere

    bool is_solid() const { return kind != Kind::rect; }

    // Signed distance for solids, unsigned (non-negative) for rects.
    double sdf(const Vec3& p) const {
        switch (kind) {
            case Kind::sphere:
                return (p - center).norm() - radius;
            case Kind::rect: {
                const Vec3 q{std::abs(p.x - center.x) - half_extents.x,
                             std::abs(p.y - center.y) - half_extents.y,
                             std::abs(p.z - center.z) - half_extents.z};
                const Vec3 outside{std::max(q.x, 0.0), std::max(q.y, 0.0), std::max(q.z, 0.0)};
                return outside.norm();
            }
            case Kind::box: {
                const Vec3 q{std::abs(p.x - center.x) - half_extents.x,
                             std::abs(p.y - center.y) - half_extents.y,
                             std::abs(p.z - center.z) - half_extents.z};
                const Vec3 outside{std::max(q.x, 0.0), std::max(q.y, 0.0), std::max(q.z, 0.0)};
                return outside.norm() + std::min(std::max({q.x, q.y, q.z}), 0.0);
            }
        }
        return 0.0;
    }

    double surface_area() const {
        const Vec3& h = half_extents;
        switch (kind) {
            case Kind::sphere:
                return 4.0 * std::numbers::pi * radius * radius;
            case Kind::rect: {
                // Area of the one nonzero face pair (zero-thickness).
                if (h.x == 0.0) return 4.0 * h.y * h.z;
                if (h.y == 0.0) return 4.0 * h.x * h.z;
                return 4.0 * h.x * h.y;
            }
            case Kind::box:
                return 8.0 * (h.x * h.y + h.y * h.z + h.x * h.z);
        }
        return 0.0;
    }

    // Uniform sample on the surface.
    Vec3 sample_surface(Rng& rng) const {
        switch (kind) {
            case Kind::sphere: {
                const double cz = 2.0 * rng.uniform01() - 1.0;
                const double phi = 2.0 * std::numbers::pi * rng.uniform01();
                const double rxy = std::sqrt(std::max(0.0, 1.0 - cz * cz));
                return center + radius * Vec3{rxy * std::cos(phi), rxy * std::sin(phi), cz};
            }
            case Kind::rect: {
                const double u = 2.0 * rng.uniform01() - 1.0;
                const double v = 2.0 * rng.uniform01() - 1.0;
                if (half_extents.x == 0.0)
                    return center + Vec3{0.0, u * half_extents.y, v * half_extents.z};
                if (half_extents.y == 0.0)
                    return center + Vec3{u * half_extents.x, 0.0, v * half_extents.z};
                return center + Vec3{u * half_extents.x, v * half_extents.y, 0.0};
            }
            case Kind::box: {
                const Vec3& h = half_extents;
                // Pick a face pair by area, then a side, then a point on it.
                const double ax = h.y * h.z, ay = h.x * h.z, az = h.x * h.y;
                const double r = rng.uniform01() * (ax + ay + az);
                const double side = rng.uniform01() < 0.5 ? -1.0 : 1.0;
                const double u = 2.0 * rng.uniform01() - 1.0;
                const double v = 2.0 * rng.uniform01() - 1.0;
                if (r < ax) return center + Vec3{side * h.x, u * h.y, v * h.z};
                if (r < ax + ay) return center + Vec3{u * h.x, side * h.y, v * h.z};
                return center + Vec3{u * h.x, v * h.y, side * h.z};
            }
        }
        return center;
    }
};

struct SceneSpec {
    std::vector<Primitive> primitives;
    std::vector<Pose> poses;        // sensor-to-world per scan
    std::size_t ray_azimuths = 360;
    std::size_t ray_elevations = 16;
    double elev_min_deg = -85.0;
    double elev_max_deg = -15.0;
    double noise_std = 0.01;   // range noise, applied along the ray [m]
    double max_range = 60.0;
    double gt_density = 2500.0;  // ground-truth samples per square meter

    double sdf(const Vec3& p) const {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& prim : primitives) best = std::min(best, prim.sdf(p));
        return best;
    }
};

// The built-in test scene: a square ground plane with two boxes and a
// sphere resting on it, scanned from a circle of downward-looking poses.
inline SceneSpec builtin_room_scene() {
    SceneSpec scene;
    scene.primitives = {
        {Primitive::Kind::rect, {0.0, 0.0, 0.0}, {5.0, 5.0, 0.0}, 0.0},
        {Primitive::Kind::box, {1.5, 1.2, 0.4}, {0.4, 0.4, 0.4}, 0.0},
        {Primitive::Kind::box, {-1.6, -1.0, 0.4}, {0.4, 0.4, 0.4}, 0.0},
        {Primitive::Kind::sphere, {-1.2, 1.6, 0.5}, {0.0, 0.0, 0.0}, 0.5},
    };
    const std::size_t n_poses = 20;
    const double ring_radius = 4.0, height = 1.8;
    for (std::size_t i = 0; i < n_poses; ++i) {
        const double phi = 2.0 * std::numbers::pi * static_cast<double>(i) / n_poses;
        Pose pose;
        pose.R = Mat3::rot_z(phi + std::numbers::pi);  // face the room center
        pose.t = {ring_radius * std::cos(phi), ring_radius * std::sin(phi), height};
        scene.poses.push_back(pose);
    }
    return scene;
}

// ---------------------------------------------------------------------------
// JSON scene files.
//
// {
//   "primitives": [
//     {"kind": "rect",   "center": [0,0,0],        "half_extents": [5,5,0]},
//     {"kind": "box",    "center": [1.5,1.2,0.4],  "half_extents": [0.4,0.4,0.4]},
//     {"kind": "sphere", "center": [-1.2,1.6,0.5], "radius": 0.5}
//   ],
//   "trajectory": {"type": "circle", "radius": 4.0, "height": 1.8, "poses": 20}
//               | {"type": "list", "poses": [[r00,r01,r02,tx, r10,...,tz], ...]},
//   "rays": {"azimuths": 360, "elevations": 16,
//            "elev_min_deg": -85, "elev_max_deg": -15},
//   "noise_std": 0.01, "max_range": 60.0, "gt_density": 2500.0
// }
// ---------------------------------------------------------------------------

inline SceneSpec parse_scene_json(const std::string& text, const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    try {
        SceneSpec scene;
        const auto vec3_of = [](const nlohmann::json& arr) {
            if (!arr.is_array() || arr.size() != 3)
                throw ParseError("expected an array of 3 numbers");
            return Vec3{arr[0].get<double>(), arr[1].get<double>(), arr[2].get<double>()};
        };
        for (const auto& pj : j.at("primitives")) {
            Primitive prim;
            const std::string kind = pj.at("kind").get<std::string>();
            prim.center = vec3_of(pj.at("center"));
            if (kind == "rect" || kind == "box") {
                prim.kind = kind == "rect" ? Primitive::Kind::rect : Primitive::Kind::box;
                prim.half_extents = vec3_of(pj.at("half_extents"));
                int zeros = (prim.half_extents.x == 0.0) + (prim.half_extents.y == 0.0) +
                            (prim.half_extents.z == 0.0);
                if (prim.kind == Primitive::Kind::rect && zeros != 1)
                    throw ParseError("rect needs exactly one zero half-extent");
                if (prim.kind == Primitive::Kind::box && zeros != 0)
                    throw ParseError("box needs all half-extents positive");
            } else if (kind == "sphere") {
                prim.kind = Primitive::Kind::sphere;
                prim.radius = pj.at("radius").get<double>();
                if (!(prim.radius > 0.0)) throw ParseError("sphere radius must be positive");
            } else {
                throw ParseError("unknown primitive kind '" + kind + "'");
            }
            scene.primitives.push_back(prim);
        }
        if (scene.primitives.empty()) throw ParseError("scene has no primitives");

        const auto& tj = j.at("trajectory");
        const std::string traj_type = tj.at("type").get<std::string>();
        if (traj_type == "circle") {
            const double radius = tj.at("radius").get<double>();
            const double height = tj.at("height").get<double>();
            const auto n = tj.at("poses").get<std::size_t>();
            if (n == 0) throw ParseError("trajectory needs at least one pose");
            for (std::size_t i = 0; i < n; ++i) {
                const double phi = 2.0 * std::numbers::pi * static_cast<double>(i) / n;
                Pose pose;
                pose.R = Mat3::rot_z(phi + std::numbers::pi);
                pose.t = {radius * std::cos(phi), radius * std::sin(phi), height};
                scene.poses.push_back(pose);
            }
        } else if (traj_type == "list") {
            for (const auto& row : tj.at("poses")) {
                if (!row.is_array() || row.size() != 12)
                    throw ParseError("each pose needs 12 numbers (row-major [R|t])");
                Pose pose;
                for (int r = 0; r < 3; ++r) {
                    for (int c = 0; c < 3; ++c) pose.R(r, c) = row[r * 4 + c].get<double>();
                    pose.t[r] = row[r * 4 + 3].get<double>();
                }
                if (pose.R.det() <= 0.0)
                    throw NonRigid("pose rotation determinant is not positive");
                scene.poses.push_back(pose);
            }
            if (scene.poses.empty()) throw ParseError("trajectory needs at least one pose");
        } else {
            throw ParseError("unknown trajectory type '" + traj_type + "'");
        }

        if (j.contains("rays")) {
            const auto& rj = j.at("rays");
            scene.ray_azimuths = rj.at("azimuths").get<std::size_t>();
            scene.ray_elevations = rj.at("elevations").get<std::size_t>();
            scene.elev_min_deg = rj.at("elev_min_deg").get<double>();
            scene.elev_max_deg = rj.at("elev_max_deg").get<double>();
            if (scene.ray_azimuths == 0 || scene.ray_elevations == 0)
                throw ParseError("ray pattern needs at least one azimuth and elevation");
            if (scene.elev_max_deg < scene.elev_min_deg)
                throw ParseError("elev_max_deg must be >= elev_min_deg");
        }
        scene.noise_std = j.value("noise_std", scene.noise_std);
        scene.max_range = j.value("max_range", scene.max_range);
        scene.gt_density = j.value("gt_density", scene.gt_density);
        if (scene.noise_std < 0.0) throw ParseError("noise_std must be non-negative");
        if (!(scene.max_range > 0.0)) throw ParseError("max_range must be positive");
        if (!(scene.gt_density > 0.0)) throw ParseError("gt_density must be positive");
        return scene;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
}

inline SceneSpec load_scene_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open scene: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_scene_json(ss.str(), path);
}

inline std::string scene_to_json(const SceneSpec& scene) {
    nlohmann::json j;
    j["primitives"] = nlohmann::json::array();
    for (const auto& prim : scene.primitives) {
        nlohmann::json pj;
        pj["center"] = {prim.center.x, prim.center.y, prim.center.z};
        switch (prim.kind) {
            case Primitive::Kind::rect: pj["kind"] = "rect"; break;
            case Primitive::Kind::box: pj["kind"] = "box"; break;
            case Primitive::Kind::sphere: pj["kind"] = "sphere"; break;
        }
        if (prim.kind == Primitive::Kind::sphere)
            pj["radius"] = prim.radius;
        else
            pj["half_extents"] = {prim.half_extents.x, prim.half_extents.y,
                                  prim.half_extents.z};
        j["primitives"].push_back(pj);
    }
    j["trajectory"]["type"] = "list";
    j["trajectory"]["poses"] = nlohmann::json::array();
    for (const auto& pose : scene.poses) {
        nlohmann::json row = nlohmann::json::array();
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) row.push_back(pose.R(r, c));
            row.push_back(pose.t[r]);
        }
        j["trajectory"]["poses"].push_back(row);
    }
    j["rays"] = {{"azimuths", scene.ray_azimuths},
                 {"elevations", scene.ray_elevations},
                 {"elev_min_deg", scene.elev_min_deg},
                 {"elev_max_deg", scene.elev_max_deg}};
    j["noise_std"] = scene.noise_std;
    j["max_range"] = scene.max_range;
    j["gt_density"] = scene.gt_density;
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Scan synthesis: sphere-trace every ray of the scan pattern from every pose.
// Hits get Gaussian range noise (misses produce no return). Ground truth is
// an area-uniform surface sampling of every primitive, rejecting points that
// fall strictly inside another solid.
// ---------------------------------------------------------------------------

struct SynthResult {
    std::vector<std::vector<ScanPoint>> frames;  // sensor-frame returns per pose
    std::vector<Pose> poses;
    std::vector<Vec3> gt_points;
};

namespace detail {

// March along the ray by the scene SDF. Returns the hit range, or a negative
// value on a miss. Exact SDFs make this converge to the surface; the
// iteration cap only bites on pathological grazing rays, treated as misses.
inline double sphere_trace(const SceneSpec& scene, const Vec3& origin, const Vec3& dir) {
    double t = 0.0;
    for (int it = 0; it < 512 && t <= scene.max_range; ++it) {
        const double s = scene.sdf(origin + t * dir);
        if (std::abs(s) < 1e-4) return t;
        t += s;
    }
    return -1.0;
}

}  // namespace detail

inline SynthResult synth_scene(const SceneSpec& scene, std::uint64_t seed) {
    SynthResult result;
    result.poses = scene.poses;
    Rng rng(seed);

    // Elevation rows are evenly spaced over the inclusive span.
    std::vector<double> elevations(scene.ray_elevations);
    for (std::size_t k = 0; k < scene.ray_elevations; ++k) {
        const double f = scene.ray_elevations == 1
                             ? 0.0
                             : static_cast<double>(k) /
                                   static_cast<double>(scene.ray_elevations - 1);
        const double deg = scene.elev_min_deg + f * (scene.elev_max_deg - scene.elev_min_deg);
        elevations[k] = deg * std::numbers::pi / 180.0;
    }

    for (const auto& pose : scene.poses) {
        std::vector<ScanPoint> frame;
        for (std::size_t ai = 0; ai < scene.ray_azimuths; ++ai) {
            const double az = 2.0 * std::numbers::pi * static_cast<double>(ai) /
                              static_cast<double>(scene.ray_azimuths);
            for (const double el : elevations) {
                const Vec3 dir_local{std::cos(el) * std::cos(az), std::cos(el) * std::sin(az),
                                     std::sin(el)};
                const Vec3 dir_world = pose.R * dir_local;
                double range = detail::sphere_trace(scene, pose.t, dir_world);
                if (range < 0.0 || range > scene.max_range) continue;
                if (scene.noise_std > 0.0) range += rng.normal(0.0, scene.noise_std);
                if (range <= 0.0) continue;
                frame.push_back({dir_local * range, 1.0f});
            }
        }
        result.frames.push_back(std::move(frame));
    }

    for (std::size_t pi = 0; pi < scene.primitives.size(); ++pi) {
        const Primitive& prim = scene.primitives[pi];
        const auto n = static_cast<std::size_t>(
            std::llround(prim.surface_area() * scene.gt_density));
        for (std::size_t i = 0; i < n; ++i) {
            const Vec3 p = prim.sample_surface(rng);
            bool inside_other = false;
            for (std::size_t qi = 0; qi < scene.primitives.size() && !inside_other; ++qi)
                if (qi != pi && scene.primitives[qi].is_solid() &&
                    scene.primitives[qi].sdf(p) < -1e-9)
                    inside_other = true;
            if (!inside_other) result.gt_points.push_back(p);
        }
    }
    return result;
}

}  // namespace triq
