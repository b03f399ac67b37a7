#include "uad/postprocess.hpp"

#include <algorithm>
#include <cmath>

#include "uad/errors.hpp"

namespace uad {

void PostprocessConfig::validate() const {
    if (!(percentile >= 0.0 && percentile <= 100.0)) {
        throw ValidationError("percentile must lie in [0,100]");
    }
    if (!(radius_px > 0.0)) throw ValidationError("radius_px must be positive");
    if (median_kernel < 1 || median_kernel % 2 == 0) {
        throw ValidationError("median_kernel must be odd and >= 1");
    }
}

void AnomalyMap::validate() const {
    for (double v : values.v) {
        if (!(v >= 0.0) || !std::isfinite(v)) {
            throw DataError("anomaly map for case '" + case_id +
                            "' contains a negative or non-finite value");
        }
    }
}

AnomalyMap residual(const Slice2D& x, const Slice2D& recon) {
    if (!x.pixels.same_shape(recon.pixels)) {
        throw ValidationError("residual: slice shapes differ");
    }
    AnomalyMap m;
    m.values = Grid2D(x.pixels.w, x.pixels.h);
    for (std::size_t i = 0; i < m.values.v.size(); ++i) {
        m.values.v[i] = std::abs(x.pixels.v[i] - recon.pixels.v[i]);
    }
    m.case_id = x.case_id;
    m.slice_index = x.slice_index;
    return m;
}

double percentile_value(std::vector<double> values, double p) {
    if (values.empty()) throw ValidationError("percentile of an empty set is undefined");
    if (!(p >= 0.0 && p <= 100.0)) throw ValidationError("percentile must lie in [0,100]");
    std::sort(values.begin(), values.end());
    const double rank = p / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(rank);
    const double frac = rank - static_cast<double>(lo);
    if (lo + 1 >= values.size()) return values.back();
    return values[lo] * (1.0 - frac) + values[lo + 1] * frac;
}

AnomalyMap percentile_threshold(const AnomalyMap& m, double p) {
    if (p == 0.0) return m;
    const double cut = percentile_value(m.values.v, p);
    AnomalyMap out = m;
    for (double& v : out.values.v) {
        if (v < cut) v = 0.0;
    }
    return out;
}

Grid2D radial_mask(int width, int height, const PostprocessConfig& cfg) {
    cfg.validate();
    if (width < 1 || height < 1) throw ValidationError("radial mask needs a positive shape");
    double cx = (width - 1) / 2.0;
    double cy = (height - 1) / 2.0;
    if (cfg.center) {
        cx = cfg.center->first;
        cy = cfg.center->second;
    }
    const double denom = 2.0 * cfg.radius_px * cfg.radius_px;
    Grid2D g(width, height);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double dx = x - cx;
            const double dy = y - cy;
            g.at(x, y) = std::exp(-(dx * dx + dy * dy) / denom);
        }
    }
    return g;
}

namespace {

inline int reflect_index(int i, int n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - i - 1;
    }
    return i;
}

}  // namespace

Grid2D median_filter(const Grid2D& g, int kernel) {
    if (kernel < 1 || kernel % 2 == 0) {
        throw ValidationError("median kernel must be odd and >= 1");
    }
    if (kernel == 1) return g;
    const int r = kernel / 2;
    Grid2D out(g.w, g.h);
    std::vector<double> window;
    window.reserve(static_cast<std::size_t>(kernel) * kernel);
    for (int y = 0; y < g.h; ++y) {
        for (int x = 0; x < g.w; ++x) {
            window.clear();
            for (int dy = -r; dy <= r; ++dy) {
                const int yy = reflect_index(y + dy, g.h);
                for (int dx = -r; dx <= r; ++dx) {
                    window.push_back(g.at(reflect_index(x + dx, g.w), yy));
                }
            }
            auto mid = window.begin() + window.size() / 2;
            std::nth_element(window.begin(), mid, window.end());
            out.at(x, y) = *mid;
        }
    }
    return out;
}

AnomalyMap apply_pipeline(const Slice2D& x, const Slice2D& recon,
                          const PostprocessConfig& cfg) {
    cfg.validate();
    AnomalyMap m = percentile_threshold(residual(x, recon), cfg.percentile);
    const Grid2D mask = radial_mask(m.values.w, m.values.h, cfg);
    for (std::size_t i = 0; i < m.values.v.size(); ++i) {
        const double v = m.values.v[i] * mask.v[i];
        m.values.v[i] = v * v;
    }
    m.values = median_filter(m.values, cfg.median_kernel);
    m.validate();
    return m;
}

}  // namespace uad
