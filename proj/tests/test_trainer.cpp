#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <triq/trainer.hpp>

using namespace triq;

namespace {

// Small everything: the shapes matter, not capacity.
TrainConfig tiny_config() {
    TrainConfig cfg;
    cfg.ns = 2;
    cfg.nf = 2;
    cfg.batch_rays = 8;
    cfg.iterations = 10;
    cfg.h = 2;
    cfg.l_max = 6;
    cfg.d = 2;
    cfg.m = 2;
    cfg.mlp_depth = 1;
    cfg.mlp_hidden = 8;
    cfg.leaf_res = 0.5;  // side 32
    cfg.seed = 5;
    return cfg;
}

// Rays converging on a unit sphere at the origin: origin at 3 units out,
// looking inward, surface hit at depth 2.
std::vector<Ray> sphere_rays(std::size_t n, std::uint64_t seed) {
    std::vector<Ray> rays;
    Rng rng(seed);
    while (rays.size() < n) {
        Vec3 u{rng.normal01(), rng.normal01(), rng.normal01()};
        const double len = u.norm();
        if (len < 1e-6) continue;
        u = u / len;
        rays.push_back({u * 3.0, (u * -1.0), 2.0});
    }
    return rays;
}

// Six axis-aligned rays around `center`: symmetric, so the data bounding box
// is exactly center +- 3 and the auto-extent anchor is predictable.
std::vector<Ray> axis_rays(const Vec3& center) {
    std::vector<Ray> rays;
    for (int axis = 0; axis < 3; ++axis)
        for (const double sign : {-1.0, 1.0}) {
            Vec3 dir{0, 0, 0};
            dir[axis] = -sign;
            Vec3 origin = center;
            origin[axis] += 3.0 * sign;
            rays.push_back({origin, dir, 2.0});
        }
    return rays;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const std::string kTmp =
    (std::filesystem::temp_directory_path() / "triq_trainer_tests").string();

struct TmpDir {
    TmpDir() {
        std::filesystem::remove_all(kTmp);
        std::filesystem::create_directories(kTmp);
    }
} const tmp_dir_guard;

}  // namespace

TEST_CASE("labels clamp to the truncation band") {
    CHECK(sdf_label(4.9, 5.0, 0.3) == Catch::Approx(-0.1));
    CHECK(sdf_label(5.25, 5.0, 0.3) == Catch::Approx(0.25));
    CHECK(sdf_label(1.0, 5.0, 0.3) == -0.3);  // far in front: exactly -tau
    CHECK(sdf_label(9.0, 5.0, 0.3) == 0.3);
}

TEST_CASE("ray sampling") {
    TrainConfig cfg = tiny_config();
    cfg.ns = 3;
    cfg.nf = 3;
    const Ray ray{{0, 0, 0}, {1, 0, 0}, 5.0};

    SECTION("near samples live in the band, free samples in front") {
        Rng rng(2);
        std::vector<TrainingSample> out;
        sample_ray(ray, cfg, rng, out);
        REQUIRE(out.size() == 6);
        for (int i = 0; i < 3; ++i) {
            CHECK(out[i].kind == TrainingSample::Kind::near_surface);
            CHECK(std::abs(out[i].p.x - 5.0) <= cfg.tau);
            CHECK(std::abs(out[i].label) <= cfg.tau);
        }
        for (int i = 3; i < 6; ++i) {
            CHECK(out[i].kind == TrainingSample::Kind::free_space);
            CHECK(out[i].p.x >= cfg.t_min);
            CHECK(out[i].p.x <= 5.0 - cfg.tau);
            // Free-space points sit at least tau before the endpoint, so the
            // clamped label is exactly -tau.
            CHECK(out[i].label == -cfg.tau);
        }
    }

    SECTION("free sampling is skipped when the interval is empty") {
        Rng rng(2);
        std::vector<TrainingSample> out;
        sample_ray({{0, 0, 0}, {1, 0, 0}, 0.7}, cfg, rng, out);  // 0.7 - tau < t_min
        REQUIRE(out.size() == 3);
        for (const auto& s : out) CHECK(s.kind == TrainingSample::Kind::near_surface);
    }

    SECTION("rays shorter than the band are degenerate") {
        Rng rng(2);
        std::vector<TrainingSample> out;
        CHECK_THROWS_AS(sample_ray({{0, 0, 0}, {1, 0, 0}, 0.25}, cfg, rng, out), DegenerateRay);
        CHECK_THROWS_AS(sample_ray({{0, 0, 0}, {1, 0, 0}, 0.3}, cfg, rng, out), DegenerateRay);
    }
}

TEST_CASE("bce loss matches the direct formula") {
    const double tau_s = 0.05;

    SECTION("hand-checked value") {
        const BceResult r = bce_loss(-0.3, 0.3, tau_s);
        // Independent recompute: o = sigmoid(s / tau_s).
        const double op = 1.0 / (1.0 + std::exp(0.3 / tau_s));
        const double og = 1.0 / (1.0 + std::exp(-0.3 / tau_s));
        const double expect = -(og * std::log(op) + (1.0 - og) * std::log(1.0 - op));
        CHECK(r.loss == Catch::Approx(expect).epsilon(1e-12));
        CHECK(r.loss > 5.0);  // confidently wrong prediction hurts
        CHECK(r.dloss_dpred == Catch::Approx((op - og) / tau_s).epsilon(1e-12));
        CHECK(r.dloss_dpred < -19.0);
    }

    SECTION("perfect prediction has zero gradient and small loss") {
        const BceResult r = bce_loss(0.1, 0.1, tau_s);
        CHECK(r.dloss_dpred == Catch::Approx(0.0).margin(1e-15));
        CHECK(r.loss < 0.7);  // entropy of the soft target, not zero
    }

    SECTION("derivative matches finite differences") {
        for (const double pred : {-0.2, -0.01, 0.0, 0.07, 0.28}) {
            for (const double gt : {-0.3, -0.05, 0.0, 0.12, 0.3}) {
                const double eps = 1e-7;
                const double hi = bce_loss(pred + eps, gt, tau_s).loss;
                const double lo = bce_loss(pred - eps, gt, tau_s).loss;
                const double fd = (hi - lo) / (2.0 * eps);
                REQUIRE(bce_loss(pred, gt, tau_s).dloss_dpred ==
                        Catch::Approx(fd).margin(1e-5).epsilon(1e-5));
            }
        }
    }

    SECTION("loss stays finite in saturation") {
        const BceResult r = bce_loss(100.0, -100.0, tau_s);
        CHECK(std::isfinite(r.loss));
    }
}

TEST_CASE("batch gradients match finite differences end to end") {
    TrainConfig cfg = tiny_config();
    Rng master(cfg.seed);
    Model model = Model::init(cfg, Extent{{-16.0, -16.0, -16.0}, cfg.extent_side()}, master);

    // A handful of fixed samples near the unit sphere.
    std::vector<TrainingSample> batch;
    Rng srng(21);
    for (int i = 0; i < 5; ++i) {
        Vec3 u{srng.normal01(), srng.normal01(), srng.normal01()};
        u = u / u.norm();
        const double off = srng.uniform(-0.25, 0.25);
        batch.push_back({u * (1.0 + off), off, TrainingSample::Kind::near_surface});
    }
    allocate_batch(model, batch, master);

    MlpGrads grads = model.mlp.make_grads();
    EvalScratch scratch;
    const double base = batch_pass(model, batch, &grads, scratch);
    REQUIRE(std::isfinite(base));

    const double eps = 1e-6;
    auto loss_only = [&]() {
        EvalScratch s;
        return batch_pass(model, batch, nullptr, s);
    };

    SECTION("mlp weight gradient") {
        auto& W = model.mlp.layers()[0].W;
        for (const std::size_t i : {std::size_t{0}, W.size() / 2, W.size() - 1}) {
            const double keep = W[i];
            W[i] = keep + eps;
            const double hi = loss_only();
            W[i] = keep - eps;
            const double lo = loss_only();
            W[i] = keep;
            REQUIRE(grads.W[0][i] ==
                    Catch::Approx((hi - lo) / (2 * eps)).margin(1e-6).epsilon(1e-4));
        }
    }

    SECTION("feature gradient") {
        // Pick a vertex the batch actually touched.
        FeatureTable& tab = model.fps.table(Plane::XY, model.fps.l_max());
        REQUIRE(!tab.touched.empty());
        const std::uint32_t slot = tab.touched.front();
        const std::size_t idx = std::size_t{slot} * model.fps.d();
        const double analytic = tab.grad[idx];
        const double keep = tab.feat[idx];
        tab.feat[idx] = keep + eps;
        const double hi = loss_only();
        tab.feat[idx] = keep - eps;
        const double lo = loss_only();
        tab.feat[idx] = keep;
        REQUIRE(analytic == Catch::Approx((hi - lo) / (2 * eps)).margin(1e-6).epsilon(1e-4));
    }
}

TEST_CASE("repeated steps on a fixed batch mostly reduce the loss") {
    TrainConfig cfg = tiny_config();
    Rng master(cfg.seed);
    Model model = Model::init(cfg, Extent{{-16.0, -16.0, -16.0}, cfg.extent_side()}, master);

    std::vector<TrainingSample> batch;
    Rng srng(33);
    for (const Ray& ray : sphere_rays(16, 14)) sample_ray(ray, cfg, srng, batch);
    allocate_batch(model, batch, master);

    MlpGrads grads = model.mlp.make_grads();
    EvalScratch scratch;
    double prev = batch_pass(model, batch, nullptr, scratch);
    const double first = prev;
    int decreases = 0;
    double last = prev;
    for (int it = 0; it < 50; ++it) {
        grads.zero();
        batch_pass(model, batch, &grads, scratch);
        apply_adam(model, grads);
        last = batch_pass(model, batch, nullptr, scratch);
        if (last < prev) ++decreases;
        prev = last;
    }
    CHECK(decreases >= 45);
    CHECK(last < 0.5 * first);
}

TEST_CASE("training is deterministic and fills the occupancy mask") {
    TrainConfig cfg = tiny_config();
    cfg.iterations = 40;  // enough batches that every ray is drawn at least once
    const std::vector<Ray> rays = sphere_rays(16, 3);

    std::size_t observed = 0;
    const TrainResult a = train(rays, cfg, [&](const TrainingSample&) { ++observed; });
    const TrainResult b = train(rays, cfg);
    CHECK(observed == cfg.iterations * cfg.batch_rays * (cfg.ns + cfg.nf));
    CHECK(a.degenerate_rays == 0);
    CHECK(std::isfinite(a.final_loss));

    const std::string pa = kTmp + "/det_a.ckpt";
    const std::string pb = kTmp + "/det_b.ckpt";
    save_checkpoint(a.model, pa);
    save_checkpoint(b.model, pb);
    REQUIRE(read_file(pa) == read_file(pb));

    // Every ray endpoint cell was sampled at some iteration.
    for (const Ray& ray : rays) CHECK(a.mask.contains_point(ray.point_at(ray.depth)));

    SECTION("different seeds change the checkpoint") {
        TrainConfig cfg2 = cfg;
        cfg2.seed = 6;
        const TrainResult c = train(rays, cfg2);
        const std::string pc = kTmp + "/det_c.ckpt";
        save_checkpoint(c.model, pc);
        CHECK(read_file(pa) != read_file(pc));
    }
}

TEST_CASE("degenerate rays are counted and skipped") {
    TrainConfig cfg = tiny_config();
    std::vector<Ray> rays = sphere_rays(8, 9);
    rays.push_back({{3, 0, 0}, {-1, 0, 0}, 0.1});  // shorter than tau
    const TrainResult r = train(rays, cfg);
    CHECK(r.degenerate_rays > 0);
}

TEST_CASE("auto extent centers the data and validates fit") {
    TrainConfig cfg = tiny_config();  // side 32

    SECTION("anchor centers the padded bounding box") {
        const Vec3 center{10.0, -5.0, 3.0};
        const TrainResult r = train(axis_rays(center), cfg);
        // Data bbox is exactly center +- 3, so the cube centers on it.
        CHECK(r.model.extent.origin.x == Catch::Approx(10.0 - 16.0).margin(1e-9));
        CHECK(r.model.extent.origin.y == Catch::Approx(-5.0 - 16.0).margin(1e-9));
        CHECK(r.model.extent.origin.z == Catch::Approx(3.0 - 16.0).margin(1e-9));
    }

    SECTION("a fixed anchor is honored") {
        TrainConfig pinned = cfg;
        pinned.has_extent_origin = true;
        pinned.extent_origin = {-20.0, -20.0, -20.0};
        const TrainResult r = train(sphere_rays(8, 4), pinned);
        CHECK(r.model.extent.origin.x == -20.0);
    }

    SECTION("scenes larger than the extent are rejected") {
        std::vector<Ray> rays = sphere_rays(8, 4);
        rays.push_back({{40.0, 0.0, 0.0}, {-1, 0, 0}, 2.0});  // 35+ m spread > 32
        CHECK_THROWS_AS(train(rays, cfg), InvalidConfig);
    }
}

TEST_CASE("non-finite losses raise a diagnostic") {
    TrainConfig cfg = tiny_config();
    Rng master(cfg.seed);
    Model model = Model::init(cfg, Extent{{-16.0, -16.0, -16.0}, cfg.extent_side()}, master);
    std::vector<TrainingSample> batch{{{0.5, 0.5, 0.5}, 0.1, TrainingSample::Kind::near_surface}};
    allocate_batch(model, batch, master);
    // Poison the output head: a NaN in a hidden layer can be legitimately
    // absorbed by ReLU, but the head bias reaches the loss unconditionally.
    model.mlp.layers().back().b[0] = std::numeric_limits<double>::quiet_NaN();
    EvalScratch scratch;
    CHECK_THROWS_AS(batch_pass(model, batch, nullptr, scratch), NonFiniteLoss);
}

TEST_CASE("model sdf rejects points outside the extent") {
    TrainConfig cfg = tiny_config();
    const TrainResult r = train(sphere_rays(8, 4), cfg);
    EvalScratch scratch;
    CHECK_NOTHROW(r.model.sdf({0.0, 0.0, 1.0}, scratch));
    CHECK_THROWS_AS(r.model.sdf({100.0, 0.0, 0.0}, scratch), OutOfExtent);
}

TEST_CASE("checkpoints round-trip exactly") {
    TrainConfig cfg = tiny_config();
    cfg.iterations = 6;
    const TrainResult r = train(sphere_rays(32, 8), cfg);

    const std::string p1 = kTmp + "/rt1.ckpt";
    const std::string p2 = kTmp + "/rt2.ckpt";
    save_checkpoint(r.model, p1);
    const Model loaded = load_checkpoint(p1);
    save_checkpoint(loaded, p2);

    SECTION("save(load(save)) is byte-identical") { REQUIRE(read_file(p1) == read_file(p2)); }

    SECTION("loaded models predict like the original") {
        // Features quantize to f32 in the file, so agreement is approximate.
        EvalScratch s1, s2;
        Rng rng(2);
        for (int i = 0; i < 200; ++i) {
            Vec3 u{rng.normal01(), rng.normal01(), rng.normal01()};
            u = u / u.norm() * rng.uniform(0.5, 2.5);
            REQUIRE(loaded.sdf(u, s2) == Catch::Approx(r.model.sdf(u, s1)).margin(1e-5));
        }
        CHECK(loaded.mlp.step() == r.model.mlp.step());
        CHECK(loaded.fps.vertex_count() == r.model.fps.vertex_count());
        CHECK(loaded.cfg.seed == cfg.seed);
        CHECK(loaded.extent.side == r.model.extent.side);
    }
}

TEST_CASE("corrupt checkpoints are rejected") {
    TrainConfig cfg = tiny_config();
    cfg.iterations = 2;
    const TrainResult r = train(sphere_rays(8, 8), cfg);
    const std::string good = kTmp + "/good.ckpt";
    save_checkpoint(r.model, good);
    const std::string bytes = read_file(good);

    auto write_variant = [&](const std::string& name, const std::string& content) {
        const std::string path = kTmp + "/" + name;
        std::ofstream out(path, std::ios::binary);
        out << content;
        return path;
    };

    SECTION("bad magic") {
        std::string bad = bytes;
        bad[0] = 'X';
        CHECK_THROWS_AS(load_checkpoint(write_variant("bad_magic.ckpt", bad)), ParseError);
    }
    SECTION("unsupported version") {
        std::string bad = bytes;
        bad[4] = 9;
        CHECK_THROWS_AS(load_checkpoint(write_variant("bad_version.ckpt", bad)), ParseError);
    }
    SECTION("truncation") {
        CHECK_THROWS_AS(
            load_checkpoint(write_variant("trunc.ckpt", bytes.substr(0, bytes.size() / 2))),
            ParseError);
        CHECK_THROWS_AS(load_checkpoint(write_variant("trunc2.ckpt", bytes.substr(0, 10))),
                        ParseError);
    }
    SECTION("trailing garbage") {
        CHECK_THROWS_AS(load_checkpoint(write_variant("trail.ckpt", bytes + "Z")), ParseError);
    }
    SECTION("missing file") { CHECK_THROWS_AS(load_checkpoint(kTmp + "/nope.ckpt"), ParseError); }
}

TEST_CASE("train config validation") {
    TrainConfig cfg = tiny_config();
    cfg.tau = 0.0;
    CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
    cfg = tiny_config();
    cfg.h = 0;
    CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
    cfg = tiny_config();
    cfg.l_max = 31;
    CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
    cfg = tiny_config();
    cfg.h = cfg.l_max + 2;
    CHECK_THROWS_AS(cfg.validate(), InvalidConfig);
    cfg = tiny_config();
    CHECK(cfg.input_dim() == static_cast<int>(cfg.d * cfg.h + 6 * cfg.m));
    CHECK(tiny_config().extent_side() == Catch::Approx(32.0));
    CHECK_THROWS_AS(train({}, tiny_config()), InvalidConfig);
}
