#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "triq/errors.hpp"
#include "triq/geometry.hpp"
#include "triq/ply_detail.hpp"
#include "triq/trainer.hpp"

namespace triq {

// ---------------------------------------------------------------------------
// Range scans: flat binary files of float32 (x, y, z, intensity) records in
// the sensor frame.
// ---------------------------------------------------------------------------

struct ScanPoint {
    Vec3 p;
    float intensity = 0.0f;
};

inline std::vector<ScanPoint> load_scan_bin(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw ParseError("cannot open scan: " + path);
    const std::streamoff size = in.tellg();
    if (size % 16 != 0)
        throw ParseError(path + ": size " + std::to_string(size) +
                         " is not a multiple of 16 (float32 x,y,z,intensity records)");
    in.seekg(0);
    std::vector<ScanPoint> points(static_cast<std::size_t>(size / 16));
    for (auto& sp : points) {
        float rec[4];
        in.read(reinterpret_cast<char*>(rec), sizeof(rec));
        sp.p = {rec[0], rec[1], rec[2]};
        sp.intensity = rec[3];
    }
    if (!in) throw ParseError(path + ": read failed");
    return points;
}

inline void write_scan_bin(const std::string& path, const std::vector<ScanPoint>& points) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot open scan for writing: " + path);
    for (const auto& sp : points) {
        const float rec[4] = {static_cast<float>(sp.p.x), static_cast<float>(sp.p.y),
                              static_cast<float>(sp.p.z), sp.intensity};
        out.write(reinterpret_cast<const char*>(rec), sizeof(rec));
    }
    if (!out) throw ParseError("failed writing scan: " + path);
}

// ---------------------------------------------------------------------------
// Poses: one line per scan, twelve reals row-major [R | t] (the top three
// rows of the homogeneous sensor-to-world matrix). Blank lines are skipped.
// Rotations are validated; small drift is re-orthonormalized with a warning,
// a non-positive determinant is an error.
// ---------------------------------------------------------------------------

inline std::vector<Pose> load_poses(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open poses: " + path);
    std::vector<Pose> poses;
    std::string line;
    for (int lineno = 1; std::getline(in, line); ++lineno) {
        std::istringstream ls(line);
        std::vector<double> vals;
        double v;
        while (ls >> v) vals.push_back(v);
        if (vals.empty()) continue;
        if (vals.size() != 12)
            throw ParseError(path + ":" + std::to_string(lineno) + ": expected 12 values, got " +
                             std::to_string(vals.size()));
        Pose pose;
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) pose.R(r, c) = vals[r * 4 + c];
            pose.t[r] = vals[r * 4 + 3];
        }
        if (pose.R.det() <= 0.0)
            throw NonRigid(path + ":" + std::to_string(lineno) +
                           ": rotation determinant is not positive");
        // Drift check: R R^T should be the identity.
        const Mat3 gram = pose.R * pose.R.transposed();
        double drift = 0.0;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                drift = std::max(drift, std::abs(gram(r, c) - (r == c ? 1.0 : 0.0)));
        if (drift > 1e-3) {
            std::cerr << "warning: " << path << ":" << lineno
                      << ": rotation drift " << drift << ", re-orthonormalizing\n";
            // Gram-Schmidt on the rows.
            Vec3 r0{pose.R(0, 0), pose.R(0, 1), pose.R(0, 2)};
            Vec3 r1{pose.R(1, 0), pose.R(1, 1), pose.R(1, 2)};
            r0 = r0.normalized();
            r1 = (r1 - dot(r1, r0) * r0).normalized();
            const Vec3 r2 = cross(r0, r1);
            const Vec3 rows[3] = {r0, r1, r2};
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) pose.R(r, c) = rows[r][c];
        }
        poses.push_back(pose);
    }
    return poses;
}

inline void write_poses(const std::string& path, const std::vector<Pose>& poses) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open poses for writing: " + path);
    char buf[32];
    for (const auto& pose : poses) {
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 4; ++c) {
                const double v = (c < 3) ? pose.R(r, c) : pose.t[r];
                std::snprintf(buf, sizeof(buf), "%.17g", v);
                out << buf << ((r == 2 && c == 3) ? "" : " ");
            }
        out << "\n";
    }
    if (!out) throw ParseError("failed writing poses: " + path);
}

// ---------------------------------------------------------------------------
// Point-cloud PLY (positions only). Reading accepts ascii and
// binary_little_endian files and skips non-vertex elements; writing emits
// binary_little_endian float32 positions.
// ---------------------------------------------------------------------------

inline std::vector<Vec3> load_ply_points(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open PLY: " + path);
    const detail::PlyHeader header = detail::read_ply_header(in, path);

    std::vector<Vec3> points;
    for (const auto& elem : header.elements) {
        const bool is_vertex = elem.name == "vertex";
        int ix = -1, iy = -1, iz = -1;
        if (is_vertex) {
            for (std::size_t i = 0; i < elem.properties.size(); ++i) {
                const auto& prop = elem.properties[i];
                if (prop.is_list) throw ParseError(path + ": list property on vertex element");
                if (prop.name == "x") ix = static_cast<int>(i);
                if (prop.name == "y") iy = static_cast<int>(i);
                if (prop.name == "z") iz = static_cast<int>(i);
            }
            if (ix < 0 || iy < 0 || iz < 0)
                throw ParseError(path + ": vertex element missing x/y/z");
            points.reserve(static_cast<std::size_t>(elem.count));
        }
        std::vector<double> row(elem.properties.size());
        for (std::uint64_t n = 0; n < elem.count; ++n) {
            for (std::size_t i = 0; i < elem.properties.size(); ++i) {
                const auto& prop = elem.properties[i];
                if (prop.is_list) {
                    const std::uint64_t count = static_cast<std::uint64_t>(
                        header.binary ? detail::read_binary_scalar(in, prop.count_type, path)
                                      : detail::read_ascii_scalar(in, path));
                    for (std::uint64_t j = 0; j < count; ++j)
                        header.binary ? detail::read_binary_scalar(in, prop.type, path)
                                      : detail::read_ascii_scalar(in, path);
                    row[i] = 0.0;
                } else {
                    row[i] = header.binary ? detail::read_binary_scalar(in, prop.type, path)
                                           : detail::read_ascii_scalar(in, path);
                }
            }
            if (is_vertex) points.push_back({row[ix], row[iy], row[iz]});
        }
    }
    return points;
}

inline void write_ply_points(const std::string& path, const std::vector<Vec3>& points) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ParseError("cannot open PLY for writing: " + path);
    out << "ply\nformat binary_little_endian 1.0\n"
        << "element vertex " << points.size() << "\n"
        << "property float x\nproperty float y\nproperty float z\n"
        << "end_header\n";
    for (const auto& p : points) {
        const float rec[3] = {static_cast<float>(p.x), static_cast<float>(p.y),
                              static_cast<float>(p.z)};
        out.write(reinterpret_cast<const char*>(rec), sizeof(rec));
    }
    if (!out) throw ParseError("failed writing PLY: " + path);
}

// ---------------------------------------------------------------------------
// Rays from posed scans. Point j of frame i becomes a ray from pose i's
// position through the world-frame point, with depth = range. Points with
// zero or non-finite range and points beyond max_range are dropped;
// `stride` > 1 keeps every stride-th point of each frame.
// ---------------------------------------------------------------------------

inline std::vector<Ray> build_rays(const std::vector<std::vector<ScanPoint>>& frames,
                                   const std::vector<Pose>& poses, std::size_t stride,
                                   double max_range) {
    if (frames.size() != poses.size())
        throw InvalidConfig("frame count " + std::to_string(frames.size()) +
                            " does not match pose count " + std::to_string(poses.size()));
    if (stride == 0) throw InvalidConfig("stride must be positive");
    std::vector<Ray> rays;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const Pose& pose = poses[i];
        for (std::size_t j = 0; j < frames[i].size(); j += stride) {
            const Vec3& local = frames[i][j].p;
            const double range = local.norm();
            if (!std::isfinite(range) || range <= 0.0 || range > max_range) continue;
            const Vec3 world = pose.apply(local);
            Ray ray;
            ray.origin = pose.t;
            ray.dir = (world - pose.t) / range;
            ray.depth = range;
            rays.push_back(ray);
        }
    }
    return rays;
}

// ---------------------------------------------------------------------------
// Training configuration files: flat `key = value` lines, `#` comments,
// unknown keys are errors, later lines win. extent_origin_{x,y,z} pin the
// extent anchor and must be given as a complete triple.
// ---------------------------------------------------------------------------

inline TrainConfig parse_train_config(std::istream& in, const std::string& path) {
    TrainConfig cfg;
    bool have_ox = false, have_oy = false, have_oz = false;
    std::string line;
    for (int lineno = 1; std::getline(in, line); ++lineno) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto strip = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
        };
        if (strip(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw InvalidConfig(path + ":" + std::to_string(lineno) + ": expected key = value");
        const std::string key = strip(line.substr(0, eq));
        const std::string value = strip(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw InvalidConfig(path + ":" + std::to_string(lineno) + ": expected key = value");

        const auto as_u64 = [&](std::uint64_t& slot) {
            std::size_t used = 0;
            try {
                slot = std::stoull(value, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != value.size())
                throw InvalidConfig(path + ":" + std::to_string(lineno) + ": '" + value +
                                    "' is not an unsigned integer");
        };
        const auto as_f64 = [&](double& slot) {
            std::size_t used = 0;
            try {
                slot = std::stod(value, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != value.size())
                throw InvalidConfig(path + ":" + std::to_string(lineno) + ": '" + value +
                                    "' is not a number");
        };

        if (key == "ns") as_u64(cfg.ns);
        else if (key == "nf") as_u64(cfg.nf);
        else if (key == "tau") as_f64(cfg.tau);
        else if (key == "tau_s") as_f64(cfg.tau_s);
        else if (key == "batch_rays") as_u64(cfg.batch_rays);
        else if (key == "iterations") as_u64(cfg.iterations);
        else if (key == "lr_features") as_f64(cfg.lr_features);
        else if (key == "lr_mlp") as_f64(cfg.lr_mlp);
        else if (key == "beta1") as_f64(cfg.beta1);
        else if (key == "beta2") as_f64(cfg.beta2);
        else if (key == "adam_eps") as_f64(cfg.adam_eps);
        else if (key == "seed") as_u64(cfg.seed);
        else if (key == "h") as_u64(cfg.h);
        else if (key == "l_max") as_u64(cfg.l_max);
        else if (key == "d") as_u64(cfg.d);
        else if (key == "m") as_u64(cfg.m);
        else if (key == "sigma2") as_f64(cfg.sigma2);
        else if (key == "mlp_depth") as_u64(cfg.mlp_depth);
        else if (key == "mlp_hidden") as_u64(cfg.mlp_hidden);
        else if (key == "leaf_res") as_f64(cfg.leaf_res);
        else if (key == "t_min") as_f64(cfg.t_min);
        else if (key == "max_range") as_f64(cfg.max_range);
        else if (key == "init_std") as_f64(cfg.init_std);
        else if (key == "mask_res") as_f64(cfg.mask_res);
        else if (key == "extent_origin_x") { as_f64(cfg.extent_origin.x); have_ox = true; }
        else if (key == "extent_origin_y") { as_f64(cfg.extent_origin.y); have_oy = true; }
        else if (key == "extent_origin_z") { as_f64(cfg.extent_origin.z); have_oz = true; }
        else
            throw InvalidConfig(path + ":" + std::to_string(lineno) + ": unknown key '" + key +
                                "'");
    }
    if (have_ox || have_oy || have_oz) {
        if (!(have_ox && have_oy && have_oz))
            throw InvalidConfig(path + ": extent_origin_{x,y,z} must be given together");
        cfg.has_extent_origin = true;
    }
    cfg.validate();
    return cfg;
}

inline TrainConfig load_train_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config: " + path);
    return parse_train_config(in, path);
}

// Scan directory listing: every *.bin file, sorted by name.
inline std::vector<std::string> list_scan_files(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw ParseError("not a directory: " + dir);
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".bin")
            files.push_back(entry.path().string());
    std::sort(files.begin(), files.end());
    return files;
}

}  // namespace triq
