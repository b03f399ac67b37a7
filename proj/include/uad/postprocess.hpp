#pragma once

#include <optional>
#include <string>
#include <vector>

#include "uad/grid.hpp"
#include "uad/volume.hpp"

namespace uad {

struct PostprocessConfig {
    double percentile = 20.0;
    double radius_px = 30.0;
    int median_kernel = 5;
    /// Mask center in pixel coordinates; when absent the slice center is used.
    std::optional<std::pair<double, double>> center;

    void validate() const;
};

/// Per-slice anomaly heatmap with provenance.
struct AnomalyMap {
    Grid2D values;
    std::string case_id;
    int slice_index = 0;
    std::string checkpoint_id;
    std::string config_hash;

    void validate() const;  // nonnegative and finite
};

/// Elementwise |x - recon|.
AnomalyMap residual(const Slice2D& x, const Slice2D& recon);

/// Linear-interpolation percentile of the values (p in [0,100]).
double percentile_value(std::vector<double> values, double p);

/// Zeroes values strictly below the p-th percentile of the slice.
AnomalyMap percentile_threshold(const AnomalyMap& m, double p);

/// Gaussian radial weights exp(-d^2 / (2 r^2)) around the configured center.
Grid2D radial_mask(int width, int height, const PostprocessConfig& cfg);

/// Median filter with reflected boundary padding; kernel must be odd.
Grid2D median_filter(const Grid2D& g, int kernel);

/// residual -> percentile threshold -> radial weighting -> square -> median.
AnomalyMap apply_pipeline(const Slice2D& x, const Slice2D& recon, const PostprocessConfig& cfg);

}  // namespace uad
