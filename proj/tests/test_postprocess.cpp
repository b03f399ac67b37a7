#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "test_helpers.hpp"
#include "uad/errors.hpp"
#include "uad/postprocess.hpp"

using namespace uad;

TEST_CASE("residual is the absolute difference and is symmetric") {
    const Slice2D x = uadtest::random_slice(16, 1, "c", 2);
    const AnomalyMap zero = residual(x, x);
    for (double v : zero.values.v) CHECK(v == 0.0);
    CHECK(zero.case_id == "c");
    CHECK(zero.slice_index == 2);

    Slice2D a(Grid2D(4, 4, 0.8), "a", 0);
    Slice2D b(Grid2D(4, 4, 0.3), "a", 0);
    const AnomalyMap d1 = residual(a, b);
    const AnomalyMap d2 = residual(b, a);
    for (double v : d1.values.v) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(d1.values.v == d2.values.v);
}

TEST_CASE("percentile_value: linear interpolation on known data") {
    // values 1..5: p=0 -> 1, p=100 -> 5, p=50 -> 3, p=25 -> 2.
    std::vector<double> vals{5.0, 3.0, 1.0, 4.0, 2.0};  // unsorted on purpose
    CHECK(percentile_value(vals, 0.0) == doctest::Approx(1.0));
    CHECK(percentile_value(vals, 100.0) == doctest::Approx(5.0));
    CHECK(percentile_value(vals, 50.0) == doctest::Approx(3.0));
    CHECK(percentile_value(vals, 25.0) == doctest::Approx(2.0));
    CHECK(percentile_value(vals, 12.5) == doctest::Approx(1.5));  // between ranks

    CHECK(percentile_value({7.0}, 40.0) == doctest::Approx(7.0));
    CHECK_THROWS_AS(percentile_value({}, 50.0), ValidationError);
    CHECK_THROWS_AS(percentile_value({1.0}, -1.0), ValidationError);
    CHECK_THROWS_AS(percentile_value({1.0}, 101.0), ValidationError);
}

TEST_CASE("percentile_threshold zeroes ~p% of random values and keeps the rest") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        AnomalyMap m;
        m.values = uadtest::random_grid(20, 20, 3000 + seed, 0.0, 1.0);
        m.case_id = "r";
        const AnomalyMap t = percentile_threshold(m, 20.0);
        std::size_t zeroed = 0;
        for (std::size_t i = 0; i < t.values.v.size(); ++i) {
            if (t.values.v[i] == 0.0) {
                ++zeroed;
            } else {
                CHECK(t.values.v[i] == m.values.v[i]);
            }
        }
        const double frac = static_cast<double>(zeroed) / t.values.v.size();
        CHECK(frac >= 0.18);
        CHECK(frac <= 0.22);
    }
}

TEST_CASE("percentile_threshold keeps constant maps and p=0 is the identity") {
    AnomalyMap m;
    m.values = Grid2D(8, 8, 0.4);
    m.case_id = "konst";
    const AnomalyMap t = percentile_threshold(m, 20.0);
    // Every value equals the percentile; nothing is *strictly* below it.
    for (double v : t.values.v) CHECK(v == 0.4);

    AnomalyMap r;
    r.values = uadtest::random_grid(8, 8, 9, 0.0, 1.0);
    r.case_id = "rand";
    const AnomalyMap id = percentile_threshold(r, 0.0);
    CHECK(id.values.v == r.values.v);
}

TEST_CASE("radial_mask: unit center, exp(-1/2) at one radius, ring symmetry") {
    PostprocessConfig cfg;
    cfg.radius_px = 30.0;
    const Grid2D m = radial_mask(61, 61, cfg);  // center (30,30) by default
    CHECK(m.at(30, 30) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(m.at(60, 30) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
    CHECK(m.at(0, 30) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
    CHECK(m.at(30, 0) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
    CHECK(m.at(30, 60) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
    // Symmetric in all four quadrants.
    for (int d = 1; d <= 30; d += 7) {
        CHECK(m.at(30 + d, 30) == doctest::Approx(m.at(30 - d, 30)).epsilon(1e-12));
        CHECK(m.at(30, 30 + d) == doctest::Approx(m.at(30, 30 - d)).epsilon(1e-12));
        CHECK(m.at(30 + d, 30 + d) == doctest::Approx(m.at(30 - d, 30 - d)).epsilon(1e-12));
    }
    // Strictly decreasing away from the center.
    CHECK(m.at(40, 30) < m.at(35, 30));
    CHECK(m.at(35, 30) < m.at(30, 30));

    // Explicit center override.
    PostprocessConfig off = cfg;
    off.center = std::make_pair(10.0, 20.0);
    const Grid2D mo = radial_mask(61, 61, off);
    CHECK(mo.at(10, 20) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(mo.at(40, 20) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
}

TEST_CASE("median_filter removes impulses, keeps constants, reflects at edges") {
    Grid2D flat(9, 9, 0.6);
    const Grid2D f = median_filter(flat, 5);
    CHECK(f.v == flat.v);

    Grid2D impulse(9, 9, 0.0);
    impulse.at(4, 4) = 1.0;  // single bright pixel
    const Grid2D cleaned = median_filter(impulse, 3);
    for (double v : cleaned.v) CHECK(v == 0.0);

    // A solid half-plane edge survives the median (edge preservation).
    Grid2D half(8, 8, 0.0);
    for (int y = 0; y < 8; ++y)
        for (int x = 4; x < 8; ++x) half.at(x, y) = 1.0;
    const Grid2D kept = median_filter(half, 3);
    CHECK(kept.at(1, 4) == 0.0);
    CHECK(kept.at(6, 4) == 1.0);

    // Reflected padding: a corner in a constant grid stays constant even for
    // kernels larger than the margin (no zero bleed-in).
    Grid2D corner(6, 6, 0.9);
    const Grid2D c = median_filter(corner, 5);
    CHECK(c.at(0, 0) == 0.9);

    CHECK_THROWS_AS(median_filter(flat, 4), ValidationError);  // even kernel
    CHECK_THROWS_AS(median_filter(flat, -1), ValidationError);
}

TEST_CASE("apply_pipeline: identical input/recon yields a zero map") {
    PostprocessConfig cfg;
    cfg.median_kernel = 3;
    const Slice2D x = uadtest::random_slice(32, 11, "case", 4);
    const AnomalyMap m = apply_pipeline(x, x, cfg);
    CHECK(m.case_id == "case");
    CHECK(m.slice_index == 4);
    for (double v : m.values.v) CHECK(v == 0.0);
}

TEST_CASE("apply_pipeline output is nonnegative, validated and deterministic") {
    PostprocessConfig cfg;
    cfg.median_kernel = 3;
    const Slice2D x = uadtest::random_slice(32, 12, "p", 0);
    const Slice2D r = uadtest::random_slice(32, 13, "p", 0);
    const AnomalyMap a = apply_pipeline(x, r, cfg);
    CHECK_NOTHROW(a.validate());
    for (double v : a.values.v) CHECK(v >= 0.0);
    const AnomalyMap b = apply_pipeline(x, r, cfg);
    CHECK(a.values.v == b.values.v);
}

TEST_CASE("apply_pipeline downweights the periphery relative to the raw residual") {
    // Same residual magnitude everywhere: after radial weighting and squaring,
    // center values must dominate edge values.
    PostprocessConfig cfg;
    cfg.median_kernel = 3;
    cfg.radius_px = 10.0;
    Slice2D x(Grid2D(33, 33, 0.8), "w", 0);
    Slice2D r(Grid2D(33, 33, 0.3), "w", 0);
    const AnomalyMap m = apply_pipeline(x, r, cfg);
    CHECK(m.values.at(16, 16) > m.values.at(0, 0));
    CHECK(m.values.at(16, 16) > m.values.at(32, 16));

    // Squared-weighting arithmetic: residual 0.5 everywhere passes the
    // percentile gate untouched, so the weighted-squared field is
    // 0.25*exp(-d^2/r^2). The 3x3 median at the center is the 4-neighbor
    // value (d^2 = 1): 0.25*exp(-1/100).
    CHECK(m.values.at(16, 16) == doctest::Approx(0.25 * std::exp(-0.01)).epsilon(1e-9));
}

TEST_CASE("AnomalyMap validation rejects negatives and non-finite values") {
    AnomalyMap m;
    m.values = Grid2D(4, 4, 0.1);
    m.case_id = "v";
    CHECK_NOTHROW(m.validate());
    m.values.at(1, 1) = -0.01;
    CHECK_THROWS_AS(m.validate(), DataError);
    m.values.at(1, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(m.validate(), DataError);
}

TEST_CASE("PostprocessConfig validation") {
    PostprocessConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.percentile = 101.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = PostprocessConfig{};
    cfg.radius_px = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = PostprocessConfig{};
    cfg.median_kernel = 2;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
}
