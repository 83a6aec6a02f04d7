#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <triq/encoding.hpp>

using namespace triq;

TEST_CASE("encoding layout matches the direct formula") {
    const PositionalEncoder enc = PositionalEncoder::from_frequencies({0.5, -2.0, 3.25});
    REQUIRE(enc.m() == 3);
    REQUIRE(enc.dim() == 18);

    const Vec3 p{0.3, -1.7, 2.2};
    std::vector<double> out(enc.dim());
    enc.encode(p, out.data());

    for (int i = 0; i < 3; ++i) {
        const double s = enc.frequencies()[i];
        const double ax = 2.0 * std::numbers::pi * s * p.x;
        const double ay = 2.0 * std::numbers::pi * s * p.y;
        const double az = 2.0 * std::numbers::pi * s * p.z;
        CHECK(out[6 * i + 0] == Catch::Approx(std::sin(ax)).margin(1e-15));
        CHECK(out[6 * i + 1] == Catch::Approx(std::sin(ay)).margin(1e-15));
        CHECK(out[6 * i + 2] == Catch::Approx(std::sin(az)).margin(1e-15));
        CHECK(out[6 * i + 3] == Catch::Approx(std::cos(ax)).margin(1e-15));
        CHECK(out[6 * i + 4] == Catch::Approx(std::cos(ay)).margin(1e-15));
        CHECK(out[6 * i + 5] == Catch::Approx(std::cos(az)).margin(1e-15));
    }
}

TEST_CASE("encoded vectors have squared norm 3m") {
    // Per frequency, sin^2 + cos^2 = 1 for each of the three coordinates.
    const PositionalEncoder enc = PositionalEncoder::init(16, 50.0, 123);
    std::mt19937_64 gen(9);
    std::uniform_real_distribution<double> dist(-100.0, 100.0);
    std::vector<double> out(enc.dim());
    for (int i = 0; i < 1000; ++i) {
        enc.encode({dist(gen), dist(gen), dist(gen)}, out.data());
        double sq = 0.0;
        for (const double v : out) sq += v * v;
        REQUIRE(sq == Catch::Approx(3.0 * enc.m()).margin(1e-9));
    }
}

TEST_CASE("frequency draws are deterministic and spread") {
    const PositionalEncoder a = PositionalEncoder::init(16, 50.0, 77);
    const PositionalEncoder b = PositionalEncoder::init(16, 50.0, 77);
    const PositionalEncoder c = PositionalEncoder::init(16, 50.0, 78);
    REQUIRE(a.frequencies() == b.frequencies());
    REQUIRE(a.frequencies() != c.frequencies());

    // Frequencies are N(0, sqrt(50)): all finite, not all tiny, sane scale.
    double max_abs = 0.0;
    for (const double f : a.frequencies()) {
        REQUIRE(std::isfinite(f));
        max_abs = std::max(max_abs, std::abs(f));
    }
    CHECK(max_abs > 1.0);
    CHECK(max_abs < 50.0);  // ~7 sigma
}

TEST_CASE("round-tripping frequencies preserves the encoding") {
    const PositionalEncoder a = PositionalEncoder::init(8, 50.0, 5);
    const PositionalEncoder b = PositionalEncoder::from_frequencies(
        std::vector<double>(a.frequencies()));
    const Vec3 p{1.0, 2.0, 3.0};
    std::vector<double> oa(a.dim()), ob(b.dim());
    a.encode(p, oa.data());
    b.encode(p, ob.data());
    REQUIRE(oa == ob);
}
