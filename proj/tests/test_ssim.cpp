#include <cmath>
#include <vector>

#include "doctest.h"
#include "test_helpers.hpp"
#include "uad/errors.hpp"
#include "uad/ssim.hpp"

using namespace uad;

namespace {

// Independent reference: direct per-window evaluation of the Gaussian-weighted
// local statistics, no separability tricks and no incremental updates.
double ssim_reference(const Grid2D& a, const Grid2D& b, const SsimConfig& cfg) {
    const int win = cfg.window;
    const int half = win / 2;
    std::vector<double> kernel(static_cast<std::size_t>(win) * win);
    double ksum = 0.0;
    for (int y = 0; y < win; ++y)
        for (int x = 0; x < win; ++x) {
            const double dx = x - half;
            const double dy = y - half;
            const double w = std::exp(-(dx * dx + dy * dy) / (2.0 * cfg.window_sigma *
                                                              cfg.window_sigma));
            kernel[static_cast<std::size_t>(y) * win + x] = w;
            ksum += w;
        }
    for (double& w : kernel) w /= ksum;

    const double c1 = (cfg.k1 * cfg.dynamic_range) * (cfg.k1 * cfg.dynamic_range);
    const double c2 = (cfg.k2 * cfg.dynamic_range) * (cfg.k2 * cfg.dynamic_range);

    double total = 0.0;
    int count = 0;
    for (int cy = half; cy < a.h - half; ++cy)
        for (int cx = half; cx < a.w - half; ++cx) {
            double mu_a = 0.0, mu_b = 0.0;
            for (int y = 0; y < win; ++y)
                for (int x = 0; x < win; ++x) {
                    const double w = kernel[static_cast<std::size_t>(y) * win + x];
                    mu_a += w * a.at(cx + x - half, cy + y - half);
                    mu_b += w * b.at(cx + x - half, cy + y - half);
                }
            double var_a = 0.0, var_b = 0.0, cov = 0.0;
            for (int y = 0; y < win; ++y)
                for (int x = 0; x < win; ++x) {
                    const double w = kernel[static_cast<std::size_t>(y) * win + x];
                    const double da = a.at(cx + x - half, cy + y - half) - mu_a;
                    const double db = b.at(cx + x - half, cy + y - half) - mu_b;
                    var_a += w * da * da;
                    var_b += w * db * db;
                    cov += w * da * db;
                }
            const double num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
            const double den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
            total += num / den;
            ++count;
        }
    return total / count;
}

SsimConfig small_cfg() {
    SsimConfig cfg;
    cfg.window = 5;
    return cfg;
}

}  // namespace

TEST_CASE("ssim of an image with itself is 1") {
    const Grid2D g = uadtest::random_grid(32, 32, 1);
    SsimConfig cfg;
    CHECK(std::abs(ssim(g, g, cfg) - 1.0) <= 1e-9);
    CHECK(std::abs(ssim(g, g, small_cfg()) - 1.0) <= 1e-9);
}

TEST_CASE("ssim matches the brute-force per-window reference") {
    SUBCASE("8x8, window 5") {
        const Grid2D a = uadtest::random_grid(8, 8, 2);
        const Grid2D b = uadtest::random_grid(8, 8, 3);
        CHECK(std::abs(ssim(a, b, small_cfg()) - ssim_reference(a, b, small_cfg())) <= 1e-9);
    }
    SUBCASE("16x16, window 11 (defaults)") {
        const Grid2D a = uadtest::random_grid(16, 16, 4);
        const Grid2D b = uadtest::random_grid(16, 16, 5);
        SsimConfig cfg;
        CHECK(std::abs(ssim(a, b, cfg) - ssim_reference(a, b, cfg)) <= 1e-9);
    }
    SUBCASE("structured content, 20x14, window 7") {
        Grid2D a(20, 14, 0.0);
        Grid2D b(20, 14, 0.0);
        for (int y = 0; y < 14; ++y)
            for (int x = 0; x < 20; ++x) {
                a.at(x, y) = 0.5 + 0.4 * std::sin(0.7 * x) * std::cos(0.5 * y);
                b.at(x, y) = 0.5 + 0.4 * std::sin(0.7 * x + 0.3) * std::cos(0.5 * y);
            }
        SsimConfig cfg;
        cfg.window = 7;
        CHECK(std::abs(ssim(a, b, cfg) - ssim_reference(a, b, cfg)) <= 1e-9);
    }
}

TEST_CASE("ssim is symmetric in its arguments") {
    const Grid2D a = uadtest::random_grid(16, 16, 6);
    const Grid2D b = uadtest::random_grid(16, 16, 7);
    SsimConfig cfg;
    CHECK(ssim(a, b, cfg) == doctest::Approx(ssim(b, a, cfg)).epsilon(1e-12));
}

TEST_CASE("independent noise scores near zero") {
    SsimConfig cfg;
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        const Grid2D a = uadtest::random_grid(96, 96, 1000 + 2 * i);
        const Grid2D b = uadtest::random_grid(96, 96, 1001 + 2 * i);
        worst = std::max(worst, std::abs(ssim(a, b, cfg)));
    }
    CHECK(worst < 0.1);
}

TEST_CASE("ssim is invariant when both images translate together") {
    // Both images shifted by the same offset: every local statistic shifts
    // with them, so the mean over valid windows changes only through window
    // membership. Use a periodic texture so edge effects cancel exactly.
    SsimConfig cfg;
    cfg.window = 5;
    const int n = 24;
    constexpr double kTau = 6.283185307179586;
    auto tex = [&](int x, int y, double phase) {
        return 0.45 + 0.25 * std::sin(kTau * ((x + 3 * y) % 12) / 12.0 + phase);
    };
    Grid2D a(n, n, 0.0), b(n, n, 0.0), as(n, n, 0.0), bs(n, n, 0.0);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            a.at(x, y) = tex(x, y, 0.0);
            b.at(x, y) = tex(x, y, 0.4);
            as.at(x, y) = tex(x + 12, y, 0.0);  // full texture period -> same image content
            bs.at(x, y) = tex(x + 12, y, 0.4);
        }
    CHECK(std::abs(ssim(a, b, cfg) - ssim(as, bs, cfg)) <= 1e-6);
}

TEST_CASE("ssim penalizes a constant intensity offset") {
    const Grid2D a = uadtest::random_grid(24, 24, 8, 0.2, 0.7);
    Grid2D b = a;
    for (double& v : b.v) v += 0.1;
    SsimConfig cfg;
    const double s = ssim(a, b, cfg);
    CHECK(s < 0.999);
    CHECK(s > 0.0);  // structure intact, luminance term reduced
}

TEST_CASE("analytic ssim gradient matches central finite differences") {
    const Grid2D a = uadtest::random_grid(8, 8, 9, 0.1, 0.9);
    Grid2D b = uadtest::random_grid(8, 8, 10, 0.1, 0.9);
    const SsimConfig cfg = small_cfg();

    Grid2D grad(8, 8, 0.0);
    (void)ssim(a, b, cfg, &grad);

    const double h = 1e-6;
    for (int idx : {0, 7, 27, 36, 45, 63}) {
        const double orig = b.v[idx];
        b.v[idx] = orig + h;
        const double fp = ssim(a, b, cfg);
        b.v[idx] = orig - h;
        const double fm = ssim(a, b, cfg);
        b.v[idx] = orig;
        const double fd = (fp - fm) / (2.0 * h);
        const double denom = std::max({1e-3, std::abs(fd), std::abs(grad.v[idx])});
        CHECK(std::abs(grad.v[idx] - fd) / denom <= 1e-3);
    }
}

TEST_CASE("ssim validates its inputs") {
    SsimConfig bad;
    bad.window = 4;  // even
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad.window = 1;
    CHECK_THROWS_AS(bad.validate(), ValidationError);

    const Grid2D a = uadtest::random_grid(8, 8, 11);
    const Grid2D b = uadtest::random_grid(9, 8, 12);
    SsimConfig cfg;
    cfg.window = 5;
    CHECK_THROWS_AS(ssim(a, b, cfg), ValidationError);  // shape mismatch

    // No valid windows: image smaller than the window.
    const Grid2D tiny = uadtest::random_grid(8, 8, 13);
    SsimConfig big;  // window 11 > 8
    CHECK_THROWS_AS(ssim(tiny, tiny, big), ValidationError);
}
