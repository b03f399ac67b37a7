#include "uad/ssim.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "uad/errors.hpp"

namespace uad {
namespace {

std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> g(size);
    const double c = (size - 1) / 2.0;
    double sum = 0.0;
    for (int i = 0; i < size; ++i) {
        g[i] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
        sum += g[i];
    }
    for (double& v : g) v /= sum;
    return g;
}

// Valid-mode separable correlation with a normalized 1D kernel: the result
// grid holds one value per fully contained window.
Grid2D corr_valid(const Grid2D& img, const std::vector<double>& g) {
    const int k = static_cast<int>(g.size());
    const int mw = img.w - k + 1, mh = img.h - k + 1;
    Grid2D tmp(mw, img.h);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < mw; ++x) {
            double acc = 0.0;
            for (int i = 0; i < k; ++i) acc += g[i] * img.at(x + i, y);
            tmp.at(x, y) = acc;
        }
    Grid2D out(mw, mh);
    for (int y = 0; y < mh; ++y)
        for (int x = 0; x < mw; ++x) {
            double acc = 0.0;
            for (int i = 0; i < k; ++i) acc += g[i] * tmp.at(x, y + i);
            out.at(x, y) = acc;
        }
    return out;
}

// Adjoint of corr_valid: spreads per-window values back over the pixels each
// window covers, weighted by the kernel.
Grid2D spread_full(const Grid2D& win, const std::vector<double>& g, int out_w, int out_h) {
    const int k = static_cast<int>(g.size());
    Grid2D tmp(out_w, win.h);
    for (int y = 0; y < win.h; ++y)
        for (int x = 0; x < win.w; ++x) {
            const double v = win.at(x, y);
            for (int i = 0; i < k; ++i) tmp.at(x + i, y) += g[i] * v;
        }
    Grid2D out(out_w, out_h);
    for (int y = 0; y < win.h; ++y)
        for (int x = 0; x < out_w; ++x) {
            const double v = tmp.at(x, y);
            for (int i = 0; i < k; ++i) out.at(x, y + i) += g[i] * v;
        }
    return out;
}

}  // namespace

void SsimConfig::validate() const {
    if (window < 3 || window % 2 == 0) {
        throw ValidationError("ssim window must be odd and >= 3 (got " +
                              std::to_string(window) + ")");
    }
    if (!(window_sigma > 0.0) || !(k1 > 0.0) || !(k2 > 0.0) || !(dynamic_range > 0.0)) {
        throw ValidationError("ssim constants must be positive");
    }
}

double ssim(const Grid2D& a, const Grid2D& b, const SsimConfig& cfg, Grid2D* grad_b) {
    cfg.validate();
    if (!a.same_shape(b)) {
        throw ValidationError("ssim inputs differ in shape: " + std::to_string(a.w) + "x" +
                              std::to_string(a.h) + " vs " + std::to_string(b.w) + "x" +
                              std::to_string(b.h));
    }
    if (a.w < cfg.window || a.h < cfg.window) {
        throw ValidationError("ssim window " + std::to_string(cfg.window) +
                              " exceeds the image extent");
    }

    const auto g = gaussian_window(cfg.window, cfg.window_sigma);
    const double c1 = cfg.k1 * cfg.dynamic_range * cfg.k1 * cfg.dynamic_range;
    const double c2 = cfg.k2 * cfg.dynamic_range * cfg.k2 * cfg.dynamic_range;

    Grid2D aa(a.w, a.h), bb(a.w, a.h), ab(a.w, a.h);
    for (std::size_t i = 0; i < a.size(); ++i) {
        aa.v[i] = a.v[i] * a.v[i];
        bb.v[i] = b.v[i] * b.v[i];
        ab.v[i] = a.v[i] * b.v[i];
    }
    const Grid2D mu_a = corr_valid(a, g);
    const Grid2D mu_b = corr_valid(b, g);
    const Grid2D s_aa = corr_valid(aa, g);
    const Grid2D s_bb = corr_valid(bb, g);
    const Grid2D s_ab = corr_valid(ab, g);

    const std::size_t nwin = mu_a.size();
    Grid2D f0(mu_a.w, mu_a.h), f1(mu_a.w, mu_a.h), f2(mu_a.w, mu_a.h);
    double mean = 0.0;
    for (std::size_t i = 0; i < nwin; ++i) {
        const double ma = mu_a.v[i], mb = mu_b.v[i];
        const double va = s_aa.v[i] - ma * ma;
        const double vb = s_bb.v[i] - mb * mb;
        const double cov = s_ab.v[i] - ma * mb;
        const double a1 = 2.0 * ma * mb + c1;
        const double a2 = 2.0 * cov + c2;
        const double b1 = ma * ma + mb * mb + c1;
        const double b2 = va + vb + c2;
        const double s = (a1 * a2) / (b1 * b2);
        mean += s;
        if (grad_b) {
            // d(ssim_win)/d(b_j) = 2*w_{j-p} * (f0 + f1*a_j + f2*b_j); the
            // window-constant fields are spread back by the adjoint filter.
            const double inv = 1.0 / (b1 * b2);
            f1.v[i] = a1 * inv;
            f2.v[i] = -s * b1 * inv;
            f0.v[i] = ma * (a2 - a1) * inv - s * mb * (b2 - b1) * inv;
        }
    }
    mean /= static_cast<double>(nwin);

    if (grad_b) {
        const Grid2D s0 = spread_full(f0, g, a.w, a.h);
        const Grid2D s1 = spread_full(f1, g, a.w, a.h);
        const Grid2D s2 = spread_full(f2, g, a.w, a.h);
        *grad_b = Grid2D(a.w, a.h);
        const double scale = 2.0 / static_cast<double>(nwin);
        for (std::size_t i = 0; i < a.size(); ++i) {
            grad_b->v[i] = scale * (s0.v[i] + s1.v[i] * a.v[i] + s2.v[i] * b.v[i]);
        }
    }
    return mean;
}

}  // namespace uad
