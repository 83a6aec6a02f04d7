#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "triq/evaluation.hpp"
#include "triq/io.hpp"
#include "triq/meshing.hpp"
#include "triq/scene.hpp"
#include "triq/trainer.hpp"

namespace triq {

namespace detail {

// TQ_SEED, when set, overrides every seed the tool would otherwise use.
inline std::uint64_t seed_with_override(std::uint64_t seed) {
    const char* env = std::getenv("TQ_SEED");
    if (!env || !*env) return seed;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0')
        throw InvalidConfig(std::string("TQ_SEED is not an unsigned integer: '") + env + "'");
    return v;
}

inline std::string format_report(const Metrics& m, double threshold) {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "mesh_samples=%zu\n"
                  "gt_points=%zu\n"
                  "threshold_m=%.6f\n"
                  "accuracy_m=%.6f\n"
                  "completion_m=%.6f\n"
                  "accuracy_ratio=%.6f\n"
                  "completion_ratio=%.6f\n",
                  m.mesh_samples, m.gt_points, threshold, m.accuracy_m, m.completion_m,
                  m.accuracy_ratio, m.completion_ratio);
    return buf;
}

}  // namespace detail

// Entry point shared by the binary and the tests; returns the process exit
// code (0 ok, 1 runtime failure, 2 usage error).
inline int cli_main(int argc, const char* const* argv) {
    CLI::App app{"tri-quadtree signed distance field reconstruction"};
    app.require_subcommand(1);

    // --- synth ---
    auto* synth = app.add_subcommand("synth", "generate a synthetic scan set");
    std::string synth_scene_name = "room";
    std::string synth_out;
    std::uint64_t synth_seed = 1;
    synth->add_option("--scene", synth_scene_name, "'room' or a scene JSON file");
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--seed", synth_seed, "random seed");

    // --- train ---
    auto* train_cmd = app.add_subcommand("train", "fit a distance field to posed scans");
    std::string train_config, train_scans, train_poses, train_out;
    std::size_t train_stride = 1;
    train_cmd->add_option("--config", train_config, "key = value config file");
    train_cmd->add_option("--scans", train_scans, "directory of *.bin scans")->required();
    train_cmd->add_option("--poses", train_poses, "pose file (12 reals per line)")->required();
    train_cmd->add_option("--out", train_out, "output checkpoint")->required();
    train_cmd->add_option("--stride", train_stride, "keep every n-th point per scan");

    // --- mesh ---
    auto* mesh_cmd = app.add_subcommand("mesh", "extract a triangle mesh from a checkpoint");
    std::string mesh_ckpt, mesh_out, mesh_mask;
    double mc_res = 0.1;
    mesh_cmd->add_option("--ckpt", mesh_ckpt, "checkpoint file")->required();
    mesh_cmd->add_option("--out", mesh_out, "output PLY mesh")->required();
    mesh_cmd->add_option("--mc-res", mc_res, "marching cubes cell size [m]");
    mesh_cmd->add_option("--mask", mesh_mask, "occupancy mask (default: <ckpt>.mask)");

    // --- eval ---
    auto* eval_cmd = app.add_subcommand("eval", "compare a mesh against ground-truth points");
    std::string eval_mesh, eval_gt, eval_out;
    double eval_threshold = 0.1;
    std::size_t eval_samples = 100000;
    std::uint64_t eval_seed = 1;
    eval_cmd->add_option("--mesh", eval_mesh, "mesh PLY")->required();
    eval_cmd->add_option("--gt", eval_gt, "ground-truth point PLY")->required();
    eval_cmd->add_option("--threshold", eval_threshold, "inlier distance [m]");
    eval_cmd->add_option("--samples", eval_samples, "surface samples drawn from the mesh");
    eval_cmd->add_option("--out", eval_out, "write a key=value report here");
    eval_cmd->add_option("--seed", eval_seed, "random seed");

    // --- info ---
    auto* info_cmd = app.add_subcommand("info", "print checkpoint facts as key=value");
    std::string info_ckpt;
    info_cmd->add_option("--ckpt", info_ckpt, "checkpoint file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*synth) {
            namespace fs = std::filesystem;
            const SceneSpec scene = synth_scene_name == "room"
                                        ? builtin_room_scene()
                                        : load_scene_file(synth_scene_name);
            const std::uint64_t seed = detail::seed_with_override(synth_seed);
            const SynthResult result = synth_scene(scene, seed);

            fs::create_directories(fs::path(synth_out) / "scans");
            std::size_t total_returns = 0;
            for (std::size_t i = 0; i < result.frames.size(); ++i) {
                char name[32];
                std::snprintf(name, sizeof(name), "%06zu.bin", i);
                write_scan_bin((fs::path(synth_out) / "scans" / name).string(),
                               result.frames[i]);
                total_returns += result.frames[i].size();
            }
            write_poses((fs::path(synth_out) / "poses.txt").string(), result.poses);
            write_ply_points((fs::path(synth_out) / "gt.ply").string(), result.gt_points);
            std::ofstream sj(fs::path(synth_out) / "scene.json");
            sj << scene_to_json(scene);
            if (!sj) throw ParseError("failed writing scene.json");

            std::cout << "scans: " << result.frames.size() << "\n"
                      << "returns: " << total_returns << "\n"
                      << "gt_points: " << result.gt_points.size() << "\n"
                      << "out: " << synth_out << "\n";
        } else if (*train_cmd) {
            TrainConfig cfg = train_config.empty() ? TrainConfig{} : load_train_config(train_config);
            cfg.seed = detail::seed_with_override(cfg.seed);

            std::vector<std::vector<ScanPoint>> frames;
            for (const auto& file : list_scan_files(train_scans))
                frames.push_back(load_scan_bin(file));
            const std::vector<Pose> poses = load_poses(train_poses);
            const std::vector<Ray> rays = build_rays(frames, poses, train_stride, cfg.max_range);
            std::cout << "rays: " << rays.size() << " from " << frames.size() << " scans\n";

            TrainResult result = train(rays, cfg, {}, &std::cout);
            save_checkpoint(result.model, train_out);
            result.mask.save(train_out + ".mask");
            std::cout << "final_loss: " << result.final_loss << "\n"
                      << "degenerate_rays: " << result.degenerate_rays << "\n"
                      << "feature_params: " << result.model.fps.parameter_count() << "\n"
                      << "mlp_params: " << result.model.mlp.parameter_count() << "\n"
                      << "checkpoint: " << train_out << "\n"
                      << "mask: " << train_out << ".mask\n";
        } else if (*mesh_cmd) {
            const Model model = load_checkpoint(mesh_ckpt);
            const std::string mask_path = mesh_mask.empty() ? mesh_ckpt + ".mask" : mesh_mask;
            const OccupancyMask mask = OccupancyMask::load(mask_path);

            EvalScratch scratch;
            const SdfGrid grid = evaluate_sdf_grid(
                [&](const Vec3& p) { return model.sdf(p, scratch); }, mask, mc_res);
            const TriangleMesh mesh = marching_cubes(grid, 0.0);
            export_mesh_ply(mesh, mesh_out);
            std::cout << "vertices: " << mesh.vertices.size() << "\n"
                      << "faces: " << mesh.faces.size() << "\n"
                      << "mesh: " << mesh_out << "\n";
        } else if (*eval_cmd) {
            const TriangleMesh mesh = import_mesh_ply(eval_mesh);
            const std::vector<Vec3> gt = load_ply_points(eval_gt);
            Rng rng(detail::seed_with_override(eval_seed));
            const std::vector<Vec3> samples = sample_mesh_surface(mesh, eval_samples, rng);
            const Metrics m = compute_metrics(samples, gt, eval_threshold);

            char line[128];
            std::snprintf(line, sizeof(line), "accuracy          %8.2f cm\n", m.accuracy_m * 100.0);
            std::cout << line;
            std::snprintf(line, sizeof(line), "completion        %8.2f cm\n", m.completion_m * 100.0);
            std::cout << line;
            std::snprintf(line, sizeof(line), "accuracy ratio    %8.2f %%\n", m.accuracy_ratio * 100.0);
            std::cout << line;
            std::snprintf(line, sizeof(line), "completion ratio  %8.2f %%\n", m.completion_ratio * 100.0);
            std::cout << line;
            if (!eval_out.empty()) {
                std::ofstream out(eval_out);
                out << detail::format_report(m, eval_threshold);
                if (!out) throw ParseError("failed writing report: " + eval_out);
            }
        } else if (*info_cmd) {
            const Model model = load_checkpoint(info_ckpt);
            const std::uint64_t feature_params = model.fps.parameter_count();
            const std::uint64_t mlp_params = model.mlp.parameter_count();
            char buf[64];
            const auto real = [&buf](double v) {
                std::snprintf(buf, sizeof(buf), "%.17g", v);
                return std::string(buf);
            };
            std::cout << "d=" << model.cfg.d << "\n"
                      << "h=" << model.cfg.h << "\n"
                      << "l_max=" << model.cfg.l_max << "\n"
                      << "m=" << model.cfg.m << "\n"
                      << "mlp_depth=" << model.cfg.mlp_depth << "\n"
                      << "mlp_hidden=" << model.cfg.mlp_hidden << "\n"
                      << "leaf_res=" << real(model.cfg.leaf_res) << "\n"
                      << "extent_origin_x=" << real(model.extent.origin.x) << "\n"
                      << "extent_origin_y=" << real(model.extent.origin.y) << "\n"
                      << "extent_origin_z=" << real(model.extent.origin.z) << "\n"
                      << "extent_side=" << real(model.extent.side) << "\n"
                      << "feature_vertices=" << model.fps.vertex_count() << "\n"
                      << "feature_params=" << feature_params << "\n"
                      << "mlp_params=" << mlp_params << "\n"
                      << "total_params=" << feature_params + mlp_params << "\n"
                      << "adam_step=" << model.mlp.step() << "\n";
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace triq
