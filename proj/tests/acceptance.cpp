// Acceptance gate: one line per criterion, PASS/FAIL/SKIP, nonzero exit on
// any failure. Runs the full room pipeline twice, so expect several minutes.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <triq/cli.hpp>
#include <triq/triq.hpp>

using namespace triq;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(bool ok, const std::string& name, const std::string& detail) {
    std::cout << (ok ? "PASS " : "FAIL ") << name << " (" << detail << ")" << std::endl;
    if (!ok) ++g_failures;
}

void skip(const std::string& name, const std::string& why) {
    std::cout << "SKIP " << name << " (" << why << ")" << std::endl;
}

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

std::string fmt(const char* f, double a, double b = 0.0) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), f, a, b);
    return buf;
}

// Run the CLI in-process with stdout captured; returns the exit code and
// appends the captured text to `log`.
int run_cli(const std::vector<std::string>& args, std::string& log) {
    std::vector<const char*> argv = {"triq"};
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream captured;
    std::streambuf* saved = std::cout.rdbuf(captured.rdbuf());
    int rc = -1;
    try {
        rc = cli_main(static_cast<int>(argv.size()), argv.data());
    } catch (...) {
        std::cout.rdbuf(saved);
        throw;
    }
    std::cout.rdbuf(saved);
    log += captured.str();
    return rc;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return "<unreadable:" + path + ">";
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::map<std::string, double> parse_report(const std::string& path) {
    std::map<std::string, double> kv;
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq != std::string::npos) kv[line.substr(0, eq)] = std::stod(line.substr(eq + 1));
    }
    return kv;
}

// ---------------------------------------------------------------------------
// 1. End-to-end loss gradients match central finite differences.
// ---------------------------------------------------------------------------

// Central differences are an oracle only where the loss is smooth at the
// scale of eps. Two spots break that: a ReLU pre-activation inside the
// perturbation window flips its branch, and a sigmoid driven deep into a
// tail makes log(1 - o) cancel catastrophically (the quotient then measures
// rounding noise, not the derivative; the analytic value stays exact).
// Trials therefore run at a moderate sigmoid scale and a batch is redrawn
// when any sample lands near either region.
bool batch_is_fd_safe(Model& model, const std::vector<TrainingSample>& batch,
                      EvalScratch& scratch) {
    scratch.phi.resize(model.cfg.input_dim());
    for (const auto& s : batch) {
        model.fps.query_point_feature(s.p, scratch.phi.data(), nullptr);
        model.enc.encode(s.p, scratch.phi.data() + model.fps.feature_dim());
        const double pred = model.mlp.forward(scratch.phi.data(), scratch.cache);
        if (std::abs(pred / model.cfg.tau_s) > 8.0) return false;
        for (std::size_t l = 0; l + 1 < scratch.cache.z.size(); ++l)
            for (const double z : scratch.cache.z[l])
                if (std::abs(z) < 1e-4) return false;
    }
    return true;
}

void check_gradients() {
    Timer timer;
    double worst = 0.0;
    std::size_t checked = 0;
    int redraws = 0;

    for (int trial = 0; trial < 20; ++trial) {
        for (int attempt = 0;; ++attempt) {
            TrainConfig cfg;
            cfg.d = 2;
            cfg.h = 2;
            cfg.m = 2;
            cfg.mlp_hidden = 8;
            cfg.mlp_depth = 2;
            cfg.l_max = 5;
            cfg.leaf_res = 0.25;  // extent side 8 m
            cfg.init_std = 0.05;
            cfg.tau_s = 0.5;  // keeps init-scale predictions out of the sigmoid tails
            const std::uint64_t draw =
                static_cast<std::uint64_t>(trial) + 1000 * static_cast<std::uint64_t>(attempt);
            cfg.seed = 100 + draw;
            const Extent extent{{-4.0, -4.0, -4.0}, cfg.extent_side()};

            Rng master(cfg.seed);
            Model model = Model::init(cfg, extent, master);

            Rng rng(7000 + draw);
            std::vector<TrainingSample> batch;
            for (int i = 0; i < 8; ++i) {
                const Vec3 p{rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
                batch.push_back(
                    {p, rng.uniform(-cfg.tau, cfg.tau), TrainingSample::Kind::near_surface});
            }
            allocate_batch(model, batch, rng);

            EvalScratch scratch;
            if (attempt < 63 && !batch_is_fd_safe(model, batch, scratch)) {
                ++redraws;
                continue;  // after 64 draws run the check anyway and let it fail loudly
            }

            MlpGrads grads = model.mlp.make_grads();
            model.fps.zero_gradients();
            grads.zero();
            batch_pass(model, batch, &grads, scratch);

            const double eps = 1e-6;
            auto fd_check = [&](double& theta, double analytic) {
                const double saved = theta;
                theta = saved + eps;
                const double lp = batch_pass(model, batch, nullptr, scratch);
                theta = saved - eps;
                const double lm = batch_pass(model, batch, nullptr, scratch);
                theta = saved;
                const double fd = (lp - lm) / (2.0 * eps);
                const double rel =
                    std::abs(fd - analytic) / std::max({1e-3, std::abs(fd), std::abs(analytic)});
                worst = std::max(worst, rel);
                ++checked;
            };

            auto& layers = model.mlp.layers();
            for (std::size_t l = 0; l < layers.size(); ++l) {
                for (std::size_t i = 0; i < layers[l].W.size(); ++i)
                    fd_check(layers[l].W[i], grads.W[l][i]);
                for (std::size_t i = 0; i < layers[l].b.size(); ++i)
                    fd_check(layers[l].b[i], grads.b[l][i]);
            }
            for (int pi = 0; pi < 3; ++pi)
                for (int level = model.fps.level_min(); level <= model.fps.l_max(); ++level) {
                    FeatureTable& tab = model.fps.table(static_cast<Plane>(pi), level);
                    for (std::size_t i = 0; i < tab.feat.size(); ++i)
                        fd_check(tab.feat[i], tab.grad[i]);
                }
            break;
        }
    }

    const double secs = timer.seconds();
    const bool ok = worst < 1e-4 && secs < 30.0 && checked > 4000;
    report(ok, "gradient-check",
           fmt("max rel err %.2e over ", worst) + std::to_string(checked) +
               fmt(" params, %d redraws, %.1f s", redraws, secs));
}

// ---------------------------------------------------------------------------
// 2. Exhaustive Morton round-trip on [0,1024)^2.
// ---------------------------------------------------------------------------

void check_morton() {
    Timer timer;
    std::uint64_t bad = 0;
    std::vector<std::uint64_t> kx(1024), ky(1024);
    for (std::uint32_t x = 0; x < 1024; ++x) {
        kx[x] = morton_encode(x, 0);
        if (kx[x] & 0xAAAAAAAAAAAAAAAAull) ++bad;  // x must occupy even bits only
    }
    for (std::uint32_t y = 0; y < 1024; ++y) {
        ky[y] = morton_encode(0, y);
        if (ky[y] & 0x5555555555555555ull) ++bad;  // y must occupy odd bits only
    }
    for (std::uint32_t x = 0; x < 1024; ++x)
        for (std::uint32_t y = 0; y < 1024; ++y) {
            const std::uint64_t key = morton_encode(x, y);
            if (key != (kx[x] | ky[y])) ++bad;
            const auto [dx, dy] = morton_decode(key);
            if (dx != x || dy != y) ++bad;
        }
    const double secs = timer.seconds();
    report(bad == 0 && secs < 10.0, "morton-round-trip",
           std::to_string(bad) + fmt(" failures over 1048576 pairs, %.1f s", secs));
}

// ---------------------------------------------------------------------------
// 3. Bilinear partition of unity: constant fields interpolate exactly.
// ---------------------------------------------------------------------------

void check_partition_of_unity() {
    const Extent extent{{-2.0, -3.0, -1.0}, 8.0};
    const int d = 3, h = 2, l_max = 6;
    FeaturePlaneSet fps(extent, d, h, l_max);

    Rng rng(42);
    std::vector<Vec3> pts;
    pts.reserve(100000);
    for (int i = 0; i < 100000; ++i)
        pts.push_back({extent.origin.x + rng.uniform01() * extent.side,
                       extent.origin.y + rng.uniform01() * extent.side,
                       extent.origin.z + rng.uniform01() * extent.side});
    Rng alloc_rng(1);
    for (const auto& p : pts) fps.allocate_for_point(p, 0.0, alloc_rng);

    auto set_all = [&](int plane_or_all, double v) {
        for (int pi = 0; pi < 3; ++pi)
            for (int level = fps.level_min(); level <= fps.l_max(); ++level) {
                auto& feat = fps.table(static_cast<Plane>(pi), level).feat;
                std::fill(feat.begin(), feat.end(),
                          (plane_or_all == 3 || plane_or_all == pi) ? v : 0.0);
            }
    };

    double worst = 0.0;
    std::vector<double> out(static_cast<std::size_t>(d) * h);
    // Each plane in isolation checks that its four weights sum to 1; the
    // all-planes pass checks the summed constant field reproduces 3c.
    for (int mode = 0; mode <= 3; ++mode) {
        const double c = mode == 3 ? 0.625 : 1.0;
        const double expected = mode == 3 ? 3.0 * c : 1.0;
        set_all(mode, c);
        for (const auto& p : pts) {
            fps.query_point_feature(p, out.data());
            for (const double v : out) worst = std::max(worst, std::abs(v - expected));
        }
    }
    report(worst <= 1e-12, "partition-of-unity",
           fmt("max deviation %.2e over 100000 queries x 4 field configs", worst));
}

// ---------------------------------------------------------------------------
// 4. Grid-accelerated nearest neighbor equals brute force exactly.
// ---------------------------------------------------------------------------

void check_nearest_neighbor() {
    Rng rng(5);
    std::uint64_t mismatches = 0;
    for (int inst = 0; inst < 100; ++inst) {
        const std::size_t n_ref = 1 + rng.uniform_index(2000);
        const double scale = (inst % 3 == 0) ? 100.0 : 1.0;
        std::vector<Vec3> ref;
        ref.reserve(n_ref);
        if (inst % 2 == 0) {
            for (std::size_t i = 0; i < n_ref; ++i)
                ref.push_back({rng.uniform(-scale, scale), rng.uniform(-scale, scale),
                               rng.uniform(-scale, scale)});
        } else {
            // Clustered: a few tight blobs stress the ring search.
            const int blobs = 1 + static_cast<int>(rng.uniform_index(5));
            std::vector<Vec3> centers;
            for (int b = 0; b < blobs; ++b)
                centers.push_back({rng.uniform(-scale, scale), rng.uniform(-scale, scale),
                                   rng.uniform(-scale, scale)});
            for (std::size_t i = 0; i < n_ref; ++i) {
                const Vec3& c = centers[rng.uniform_index(centers.size())];
                ref.push_back({c.x + rng.normal(0, scale * 0.01),
                               c.y + rng.normal(0, scale * 0.01),
                               c.z + rng.normal(0, scale * 0.01)});
            }
        }
        std::vector<Vec3> queries;
        for (int i = 0; i < 48; ++i)
            queries.push_back({rng.uniform(-1.5 * scale, 1.5 * scale),
                               rng.uniform(-1.5 * scale, 1.5 * scale),
                               rng.uniform(-1.5 * scale, 1.5 * scale)});
        queries.push_back(ref[rng.uniform_index(ref.size())]);  // exact hit

        const std::vector<double> fast = nearest_distances(queries, ref);
        for (std::size_t qi = 0; qi < queries.size(); ++qi) {
            double best_sq = std::numeric_limits<double>::infinity();
            for (const auto& r : ref) {
                const Vec3 diff = r - queries[qi];
                best_sq = std::min(best_sq, dot(diff, diff));
            }
            if (fast[qi] != std::sqrt(best_sq)) ++mismatches;
        }
    }
    report(mismatches == 0, "nearest-neighbor-exact",
           std::to_string(mismatches) + " mismatches over 100 instances");
}

// ---------------------------------------------------------------------------
// 5. Marching cubes on an analytic unit sphere: vertex error and manifoldness.
// ---------------------------------------------------------------------------

void check_marching_cubes_sphere() {
    SdfGrid grid;
    grid.origin = {-1.25, -1.25, -1.25};
    grid.res = 0.1;
    grid.nx = grid.ny = grid.nz = 26;
    grid.values.resize(static_cast<std::size_t>(grid.nx) * grid.ny * grid.nz);
    grid.valid.assign(grid.values.size(), 1);
    for (int k = 0; k < grid.nz; ++k)
        for (int j = 0; j < grid.ny; ++j)
            for (int i = 0; i < grid.nx; ++i)
                grid.values[grid.idx(i, j, k)] = grid.node_pos(i, j, k).norm() - 1.0;

    const TriangleMesh mesh = marching_cubes(grid, 0.0);
    double worst = 0.0;
    for (const auto& v : mesh.vertices) worst = std::max(worst, std::abs(v.norm() - 1.0));

    std::map<std::pair<std::int32_t, std::int32_t>, int> edge_count;
    for (const auto& f : mesh.faces)
        for (int e = 0; e < 3; ++e) {
            const std::int32_t a = f[e], b = f[(e + 1) % 3];
            ++edge_count[{std::min(a, b), std::max(a, b)}];
        }
    std::size_t bad_edges = 0;
    for (const auto& [edge, count] : edge_count)
        if (count != 2) ++bad_edges;

    const bool ok = !mesh.faces.empty() && worst <= 0.1 && bad_edges == 0;
    report(ok, "marching-cubes-sphere",
           fmt("max radial error %.4f m, ", worst) + std::to_string(bad_edges) +
               " non-manifold edges, " + std::to_string(mesh.faces.size()) + " faces");
}

// ---------------------------------------------------------------------------
// 6/7/8. Room pipeline, feature sparsity, determinism.
// ---------------------------------------------------------------------------

struct RoomArtifacts {
    fs::path dir;
    bool ok = false;
    double accuracy_ratio = 0.0, completion_ratio = 0.0;
    double seconds = 0.0;
    std::string log;
};

RoomArtifacts run_room_pipeline(const fs::path& dir) {
    RoomArtifacts a;
    a.dir = dir;
    fs::remove_all(dir);
    fs::create_directories(dir);
    Timer timer;
    const std::string data = (dir / "data").string();
    const std::string ckpt = (dir / "model.ckpt").string();
    const std::string mesh = (dir / "mesh.ply").string();
    const std::string rep = (dir / "report.txt").string();
    if (run_cli({"synth", "--scene", "room", "--out", data, "--seed", "1"}, a.log) != 0)
        return a;
    if (run_cli({"train", "--scans", data + "/scans", "--poses", data + "/poses.txt", "--out",
                 ckpt},
                a.log) != 0)
        return a;
    if (run_cli({"mesh", "--ckpt", ckpt, "--out", mesh, "--mc-res", "0.1"}, a.log) != 0)
        return a;
    if (run_cli({"eval", "--mesh", mesh, "--gt", data + "/gt.ply", "--threshold", "0.1", "--out",
                 rep},
                a.log) != 0)
        return a;
    a.seconds = timer.seconds();
    const auto kv = parse_report(rep);
    if (kv.count("accuracy_ratio") && kv.count("completion_ratio")) {
        a.accuracy_ratio = kv.at("accuracy_ratio");
        a.completion_ratio = kv.at("completion_ratio");
        a.ok = true;
    }
    return a;
}

void check_feature_sparsity(const RoomArtifacts& room) {
    if (!room.ok) {
        report(false, "feature-sparsity", "room pipeline unavailable");
        return;
    }
    // Reload the exact rays the pipeline trained on.
    const std::string data = (room.dir / "data").string();
    TrainConfig cfg;  // pipeline defaults
    std::vector<std::vector<ScanPoint>> frames;
    for (const auto& file : list_scan_files(data + "/scans"))
        frames.push_back(load_scan_bin(file));
    const std::vector<Ray> rays =
        build_rays(frames, load_poses(data + "/poses.txt"), 1, cfg.max_range);

    // Resolve the extent without training (zero iterations).
    TrainConfig probe_cfg = cfg;
    probe_cfg.iterations = 0;
    const Extent extent = train(rays, probe_cfg).model.extent;

    // Reference structure: a 3D octree storing one feature vector per unique
    // corner of every sample-occupied voxel, at the same levels and sizes as
    // the planar grids. Counted by replaying the training sample stream.
    const int h = static_cast<int>(cfg.h);
    const int l_max = static_cast<int>(cfg.l_max);
    std::vector<std::unordered_set<std::uint64_t>> corners(h);
    for (auto& s : corners) s.reserve(1 << 20);
    std::vector<std::array<long, 3>> last(h, {-1, -1, -1});
    std::uint64_t out_of_range = 0;

    auto observer = [&](const TrainingSample& s) {
        for (int li = 0; li < h; ++li) {
            const int level = l_max - h + 1 + li;
            const double cell = extent.side / static_cast<double>(std::uint64_t{1} << level);
            const long ix = static_cast<long>(std::floor((s.p.x - extent.origin.x) / cell));
            const long iy = static_cast<long>(std::floor((s.p.y - extent.origin.y) / cell));
            const long iz = static_cast<long>(std::floor((s.p.z - extent.origin.z) / cell));
            if (ix < 0 || iy < 0 || iz < 0 || ix + 1 >= (1 << 21) || iy + 1 >= (1 << 21) ||
                iz + 1 >= (1 << 21)) {
                ++out_of_range;
                continue;
            }
            if (last[li] == std::array<long, 3>{ix, iy, iz}) continue;
            last[li] = {ix, iy, iz};
            for (long a = 0; a <= 1; ++a)
                for (long b = 0; b <= 1; ++b)
                    for (long c = 0; c <= 1; ++c)
                        corners[li].insert((static_cast<std::uint64_t>(ix + a) << 42) |
                                           (static_cast<std::uint64_t>(iy + b) << 21) |
                                           static_cast<std::uint64_t>(iz + c));
        }
    };

    const TrainResult full = train(rays, cfg, observer);
    const std::uint64_t tri_params = full.model.fps.parameter_count();
    std::uint64_t octree_corners = 0;
    for (const auto& s : corners) octree_corners += s.size();
    const std::uint64_t octree_params = octree_corners * cfg.d;

    const bool ok = out_of_range == 0 && octree_params > 0 && 2 * tri_params <= octree_params;
    report(ok, "feature-sparsity",
           std::to_string(tri_params) + " planar feature params vs " +
               std::to_string(octree_params) + " octree-corner params (" +
               fmt("%.1f%%)", 100.0 * static_cast<double>(tri_params) /
                                  static_cast<double>(octree_params)));
}

void check_determinism(const RoomArtifacts& first) {
    if (!first.ok) {
        report(false, "determinism", "room pipeline unavailable");
        return;
    }
    const RoomArtifacts second = run_room_pipeline(first.dir.parent_path() / "room_rerun");
    if (!second.ok) {
        report(false, "determinism", "rerun failed");
        return;
    }
    std::vector<std::string> diffs;
    for (const char* rel : {"model.ckpt", "model.ckpt.mask", "mesh.ply", "report.txt"})
        if (read_file((first.dir / rel).string()) != read_file((second.dir / rel).string()))
            diffs.push_back(rel);
    std::string detail = "checkpoint, mask, mesh, and report byte-identical across reruns";
    if (!diffs.empty()) {
        detail = "differs:";
        for (const auto& d : diffs) detail += " " + d;
    }
    report(diffs.empty(), "determinism", detail);
}

// ---------------------------------------------------------------------------
// 9. Optional: reconstruction quality on user-supplied lidar data.
// ---------------------------------------------------------------------------

void check_maicity(const fs::path& tmp) {
    const char* env = std::getenv("TQ_MAICITY_DIR");
    if (env == nullptr || *env == '\0') {
        skip("maicity-reconstruction", "TQ_MAICITY_DIR not set");
        return;
    }
    const std::string base = env;
    std::string log;
    const std::string ckpt = (tmp / "mai.ckpt").string();
    const std::string mesh = (tmp / "mai_mesh.ply").string();
    const std::string rep = (tmp / "mai_report.txt").string();
    Timer timer;
    bool ok = run_cli({"train", "--scans", base + "/scans", "--poses", base + "/poses.txt",
                       "--out", ckpt},
                      log) == 0 &&
              run_cli({"mesh", "--ckpt", ckpt, "--out", mesh, "--mc-res", "0.1"}, log) == 0 &&
              run_cli({"eval", "--mesh", mesh, "--gt", base + "/gt.ply", "--threshold", "0.1",
                       "--out", rep},
                      log) == 0;
    double completion = 0.0;
    if (ok) {
        const auto kv = parse_report(rep);
        completion = kv.count("completion_ratio") ? kv.at("completion_ratio") : 0.0;
        ok = completion >= 0.90;
    }
    report(ok, "maicity-reconstruction",
           fmt("completion ratio %.2f%%, %.0f s", 100.0 * completion, timer.seconds()));
}

}  // namespace

int main() {
    // Seeds must come from the criteria themselves, not the environment.
    unsetenv("TQ_SEED");
    const fs::path tmp = fs::temp_directory_path() / "triq_acceptance";
    fs::remove_all(tmp);
    fs::create_directories(tmp);

    check_gradients();
    check_morton();
    check_partition_of_unity();
    check_nearest_neighbor();
    check_marching_cubes_sphere();

    const RoomArtifacts room = run_room_pipeline(tmp / "room");
    report(room.ok && room.accuracy_ratio >= 0.90 && room.completion_ratio >= 0.90 &&
               room.seconds <= 600.0,
           "room-reconstruction",
           fmt("accuracy ratio %.2f%%, ", 100.0 * room.accuracy_ratio) +
               fmt("completion ratio %.2f%%, %.0f s", 100.0 * room.completion_ratio,
                   room.seconds));
    if (!room.ok) {
        // Surface the tail of the pipeline log so failures are diagnosable.
        const std::string tail =
            room.log.size() > 2000 ? room.log.substr(room.log.size() - 2000) : room.log;
        std::cout << "--- room pipeline log tail ---\n" << tail << "-----------------------------\n";
    }

    check_feature_sparsity(room);
    check_determinism(room);
    check_maicity(tmp);

    if (g_failures == 0)
        std::cout << "all criteria passed" << std::endl;
    else
        std::cout << g_failures << " criteria failed" << std::endl;
    return g_failures == 0 ? 0 : 1;
}
