#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "uad/volume.hpp"

namespace uad {

// Uterus-centered crop window. width/height equal the configured crop size;
// z range is inclusive. `truncated` marks uterine tissue falling outside the
// clamped in-plane box (the crop is kept at fixed size, never rescaled).
struct BoundingBox {
    int x0 = 0;
    int y0 = 0;
    int width = 0;
    int height = 0;
    int z_lo = 0;
    int z_hi = 0;
    bool truncated = false;

    void validate(const Shape3& vol_shape) const;
};

// Trilinear resampling onto a new spacing. Output shape per axis is
// round(in_shape * in_spacing / target); indices map via
// in = out * target / in_spacing with origins aligned at index 0.
Volume resample(const Volume& v, Spacing target_spacing);

// Nearest-neighbor counterpart for label grids. `in_spacing` is the spacing
// of the paired volume (masks carry no spacing of their own).
SegmentationMask resample_mask(const SegmentationMask& m, Spacing in_spacing,
                               Spacing target_spacing);

// Trilinear resize to an exact shape; spacing rescales by old_shape/new_shape.
Volume resize_to(const Volume& v, Shape3 shape);
SegmentationMask resize_mask_to(const SegmentationMask& m, Shape3 shape);

// Min-max normalization to [0,1]; constant volumes map to all zeros.
Volume normalize_intensity(const Volume& v);

// Keeps only the largest 26-connected 3D component of `label`; other labels
// untouched. Ties keep the component whose smallest (x,y,z) coordinate is
// lexicographically least. A label absent from the grid leaves the mask
// unchanged and sets *label_absent.
SegmentationMask largest_connected_component(const SegmentationMask& m, std::int32_t label,
                                             bool* label_absent = nullptr);

// In-plane crop×crop box centered on the uterus centroid (clamped in-bounds);
// z range spans the slices containing uterine tissue.
BoundingBox compute_bbox(const SegmentationMask& m, const std::vector<std::int32_t>& uterus_labels,
                         int crop = 96);

std::pair<Volume, SegmentationMask> crop(const Volume& v, const SegmentationMask& m,
                                         const BoundingBox& b);

struct PreprocessOptions {
    Spacing target_spacing{0.5, 0.5, 1.0};
    Shape3 working_shape{256, 256, 30};
    int crop_size = 96;
    std::vector<std::int32_t> uterus_labels{1, 2, 3};

    void validate() const;
};

struct PreprocessedCase {
    Volume volume;                        // cropped, normalized working crop
    std::vector<SegmentationMask> masks;  // cropped, one per input mask
    BoundingBox box;
    std::vector<std::int32_t> absent_uterus_labels;  // labels missing from the reference mask
};

// Full per-case chain in fixed order: resample -> resize -> normalize ->
// per-uterus-label LCC -> bbox -> crop. masks.front() is the structure
// reference that drives LCC and the bounding box; every mask is cropped
// identically.
PreprocessedCase preprocess_case(const Volume& v, const std::vector<SegmentationMask>& masks,
                                 const PreprocessOptions& opt);

}  // namespace uad
