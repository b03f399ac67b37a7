#include "uad/clahe.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "uad/errors.hpp"

namespace uad {
namespace {

// Clip a tile histogram at `limit` counts per bin and spread the excess
// uniformly, iterating until the redistribution itself stops overflowing.
void clip_histogram(std::vector<double>& hist, double limit) {
    for (int pass = 0; pass < 64; ++pass) {
        double excess = 0.0;
        for (double& b : hist) {
            if (b > limit) {
                excess += b - limit;
                b = limit;
            }
        }
        if (excess <= 1e-12) return;
        const double share = excess / hist.size();
        for (double& b : hist) b += share;
    }
}

}  // namespace

Grid2D clahe(const Grid2D& g, double clip_limit, int tiles, int bins) {
    if (g.w <= 0 || g.h <= 0) throw ValidationError("clahe input grid is empty");
    if (clip_limit <= 0.0 || clip_limit > 1.0) {
        throw ValidationError("clahe clip limit must be in (0,1]");
    }
    if (tiles < 1 || bins < 2) throw ValidationError("clahe needs tiles >= 1 and bins >= 2");

    const auto [lo_it, hi_it] = std::minmax_element(g.v.begin(), g.v.end());
    if (*hi_it <= *lo_it) return g;  // constant image

    const int tx = std::min(tiles, g.w);
    const int ty = std::min(tiles, g.h);
    const auto bin_of = [&](double v) {
        const int b = static_cast<int>(v * bins);
        return std::clamp(b, 0, bins - 1);
    };

    // Per-tile equalization mapping: bin -> cdf value in (0,1].
    std::vector<std::vector<double>> maps(static_cast<std::size_t>(tx) * ty);
    for (int j = 0; j < ty; ++j) {
        const int y0 = j * g.h / ty, y1 = (j + 1) * g.h / ty;
        for (int i = 0; i < tx; ++i) {
            const int x0 = i * g.w / tx, x1 = (i + 1) * g.w / tx;
            std::vector<double> hist(bins, 0.0);
            for (int y = y0; y < y1; ++y)
                for (int x = x0; x < x1; ++x) ++hist[bin_of(g.at(x, y))];
            const double npix = static_cast<double>(x1 - x0) * (y1 - y0);
            clip_histogram(hist, std::max(1.0, clip_limit * npix));
            auto& map = maps[static_cast<std::size_t>(j) * tx + i];
            map.resize(bins);
            double cdf = 0.0;
            for (int b = 0; b < bins; ++b) {
                cdf += hist[b];
                map[b] = cdf / npix;
            }
        }
    }

    // Bilinear blend of the four surrounding tile mappings, clamped at edges.
    Grid2D out(g.w, g.h);
    for (int y = 0; y < g.h; ++y) {
        const double fy = (y + 0.5) * ty / g.h - 0.5;
        const int j0 = std::clamp(static_cast<int>(std::floor(fy)), 0, ty - 1);
        const int j1 = std::min(j0 + 1, ty - 1);
        const double wy = std::clamp(fy - j0, 0.0, 1.0);
        for (int x = 0; x < g.w; ++x) {
            const double fx = (x + 0.5) * tx / g.w - 0.5;
            const int i0 = std::clamp(static_cast<int>(std::floor(fx)), 0, tx - 1);
            const int i1 = std::min(i0 + 1, tx - 1);
            const double wx = std::clamp(fx - i0, 0.0, 1.0);
            const int b = bin_of(g.at(x, y));
            const double v00 = maps[static_cast<std::size_t>(j0) * tx + i0][b];
            const double v01 = maps[static_cast<std::size_t>(j0) * tx + i1][b];
            const double v10 = maps[static_cast<std::size_t>(j1) * tx + i0][b];
            const double v11 = maps[static_cast<std::size_t>(j1) * tx + i1][b];
            out.at(x, y) = (1 - wy) * ((1 - wx) * v00 + wx * v01) +
                           wy * ((1 - wx) * v10 + wx * v11);
        }
    }
    return out;
}

}  // namespace uad
