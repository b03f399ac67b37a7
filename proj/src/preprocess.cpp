#include "uad/preprocess.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>

#include "uad/errors.hpp"

namespace uad {
namespace {

Shape3 resampled_shape(const Shape3& in_shape, const Spacing& in_spacing, const Spacing& target) {
    Shape3 out{};
    for (int a = 0; a < 3; ++a) {
        out[a] = static_cast<int>(std::llround(in_shape[a] * in_spacing[a] / target[a]));
        if (out[a] < 1) {
            throw ValidationError("resample produces degenerate axis " + std::to_string(a) +
                                  " (shape " + std::to_string(out[a]) + ")");
        }
    }
    return out;
}

// Shared interpolation cores. scale[a] maps output index -> input index.
template <typename Fetch>
double trilinear_at(const Shape3& in_shape, const std::array<double, 3>& scale, int ox, int oy,
                    int oz, Fetch&& fetch) {
    double fx = ox * scale[0], fy = oy * scale[1], fz = oz * scale[2];
    fx = std::clamp(fx, 0.0, static_cast<double>(in_shape[0] - 1));
    fy = std::clamp(fy, 0.0, static_cast<double>(in_shape[1] - 1));
    fz = std::clamp(fz, 0.0, static_cast<double>(in_shape[2] - 1));
    const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy), z0 = static_cast<int>(fz);
    const int x1 = std::min(x0 + 1, in_shape[0] - 1);
    const int y1 = std::min(y0 + 1, in_shape[1] - 1);
    const int z1 = std::min(z0 + 1, in_shape[2] - 1);
    const double tx = fx - x0, ty = fy - y0, tz = fz - z0;

    const double c00 = fetch(x0, y0, z0) * (1 - tx) + fetch(x1, y0, z0) * tx;
    const double c10 = fetch(x0, y1, z0) * (1 - tx) + fetch(x1, y1, z0) * tx;
    const double c01 = fetch(x0, y0, z1) * (1 - tx) + fetch(x1, y0, z1) * tx;
    const double c11 = fetch(x0, y1, z1) * (1 - tx) + fetch(x1, y1, z1) * tx;
    const double c0 = c00 * (1 - ty) + c10 * ty;
    const double c1 = c01 * (1 - ty) + c11 * ty;
    return c0 * (1 - tz) + c1 * tz;
}

Volume interp_volume(const Volume& v, Shape3 out_shape, const std::array<double, 3>& scale,
                     Spacing out_spacing) {
    Volume out(out_shape, out_spacing, v.identifier);
    auto fetch = [&](int x, int y, int z) { return static_cast<double>(v.at(x, y, z)); };
    std::size_t i = 0;
    for (int z = 0; z < out_shape[2]; ++z)
        for (int y = 0; y < out_shape[1]; ++y)
            for (int x = 0; x < out_shape[0]; ++x)
                out.voxels[i++] = static_cast<float>(trilinear_at(v.shape, scale, x, y, z, fetch));
    return out;
}

SegmentationMask interp_mask(const SegmentationMask& m, Shape3 out_shape,
                             const std::array<double, 3>& scale) {
    SegmentationMask out(out_shape, m.label_names, m.annotator);
    std::size_t i = 0;
    for (int z = 0; z < out_shape[2]; ++z)
        for (int y = 0; y < out_shape[1]; ++y)
            for (int x = 0; x < out_shape[0]; ++x) {
                const int sx = std::clamp(static_cast<int>(std::llround(x * scale[0])), 0,
                                          m.shape[0] - 1);
                const int sy = std::clamp(static_cast<int>(std::llround(y * scale[1])), 0,
                                          m.shape[1] - 1);
                const int sz = std::clamp(static_cast<int>(std::llround(z * scale[2])), 0,
                                          m.shape[2] - 1);
                out.labels[i++] = m.at(sx, sy, sz);
            }
    return out;
}

}  // namespace

void BoundingBox::validate(const Shape3& vol_shape) const {
    if (width <= 0 || height <= 0 || width != height) {
        throw ValidationError("bounding box must be square with positive size (got " +
                              std::to_string(width) + "x" + std::to_string(height) + ")");
    }
    if (z_lo > z_hi) {
        throw ValidationError("bounding box z range inverted: [" + std::to_string(z_lo) + "," +
                              std::to_string(z_hi) + "]");
    }
    if (x0 < 0 || y0 < 0 || z_lo < 0 || x0 + width > vol_shape[0] || y0 + height > vol_shape[1] ||
        z_hi >= vol_shape[2]) {
        throw ValidationError("bounding box exceeds volume bounds");
    }
}

Volume resample(const Volume& v, Spacing target_spacing) {
    v.validate();
    for (int a = 0; a < 3; ++a) {
        if (!(target_spacing[a] > 0.0)) {
            throw ValidationError("target spacing must be strictly positive");
        }
    }
    const Shape3 out_shape = resampled_shape(v.shape, v.spacing, target_spacing);
    std::array<double, 3> scale{};
    for (int a = 0; a < 3; ++a) scale[a] = target_spacing[a] / v.spacing[a];
    if (out_shape == v.shape && scale == std::array<double, 3>{1.0, 1.0, 1.0}) return v;
    return interp_volume(v, out_shape, scale, target_spacing);
}

SegmentationMask resample_mask(const SegmentationMask& m, Spacing in_spacing,
                               Spacing target_spacing) {
    for (int a = 0; a < 3; ++a) {
        if (!(in_spacing[a] > 0.0) || !(target_spacing[a] > 0.0)) {
            throw ValidationError("spacing must be strictly positive");
        }
    }
    const Shape3 out_shape = resampled_shape(m.shape, in_spacing, target_spacing);
    std::array<double, 3> scale{};
    for (int a = 0; a < 3; ++a) scale[a] = target_spacing[a] / in_spacing[a];
    if (out_shape == m.shape && scale == std::array<double, 3>{1.0, 1.0, 1.0}) return m;
    return interp_mask(m, out_shape, scale);
}

Volume resize_to(const Volume& v, Shape3 shape) {
    v.validate();
    for (int a = 0; a < 3; ++a) {
        if (shape[a] < 1) throw ValidationError("resize target shape must be positive");
    }
    std::array<double, 3> scale{};
    Spacing out_spacing{};
    for (int a = 0; a < 3; ++a) {
        scale[a] = static_cast<double>(v.shape[a]) / shape[a];
        out_spacing[a] = v.spacing[a] * scale[a];
    }
    if (shape == v.shape) return v;
    return interp_volume(v, shape, scale, out_spacing);
}

SegmentationMask resize_mask_to(const SegmentationMask& m, Shape3 shape) {
    for (int a = 0; a < 3; ++a) {
        if (shape[a] < 1) throw ValidationError("resize target shape must be positive");
    }
    if (shape == m.shape) return m;
    std::array<double, 3> scale{};
    for (int a = 0; a < 3; ++a) scale[a] = static_cast<double>(m.shape[a]) / shape[a];
    return interp_mask(m, shape, scale);
}

Volume normalize_intensity(const Volume& v) {
    v.validate();
    float lo = std::numeric_limits<float>::max();
    float hi = std::numeric_limits<float>::lowest();
    for (float x : v.voxels) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    Volume out = v;
    if (hi <= lo) {
        std::fill(out.voxels.begin(), out.voxels.end(), 0.0f);
        return out;
    }
    const float range = hi - lo;
    for (float& x : out.voxels) x = (x - lo) / range;
    return out;
}

SegmentationMask largest_connected_component(const SegmentationMask& m, std::int32_t label,
                                             bool* label_absent) {
    if (!m.label_names.count(label)) {
        throw ValidationError("label " + std::to_string(label) + " is not in label_names");
    }
    if (label_absent) *label_absent = false;

    const int w = m.shape[0], h = m.shape[1], d = m.shape[2];
    const std::size_t n = m.labels.size();
    std::vector<std::int32_t> comp(n, 0);  // 0 = unvisited / not this label
    std::int32_t ncomp = 0;

    struct CompInfo {
        std::size_t count = 0;
        std::array<int, 3> min_coord{};  // lexicographic minimum (x,y,z)
    };
    std::vector<CompInfo> infos(1);  // index 0 unused

    std::vector<std::size_t> stack;
    for (std::size_t seed = 0; seed < n; ++seed) {
        if (m.labels[seed] != label || comp[seed] != 0) continue;
        ++ncomp;
        infos.push_back(CompInfo{0, {w, h, d}});
        CompInfo& info = infos.back();
        comp[seed] = ncomp;
        stack.assign(1, seed);
        while (!stack.empty()) {
            const std::size_t i = stack.back();
            stack.pop_back();
            const int x = static_cast<int>(i % w);
            const int y = static_cast<int>((i / w) % h);
            const int z = static_cast<int>(i / (static_cast<std::size_t>(w) * h));
            ++info.count;
            const std::array<int, 3> c{x, y, z};
            if (c < info.min_coord) info.min_coord = c;
            for (int dz = -1; dz <= 1; ++dz)
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (dx == 0 && dy == 0 && dz == 0) continue;
                        const int nx = x + dx, ny = y + dy, nz = z + dz;
                        if (nx < 0 || nx >= w || ny < 0 || ny >= h || nz < 0 || nz >= d) continue;
                        const std::size_t j = m.index(nx, ny, nz);
                        if (m.labels[j] == label && comp[j] == 0) {
                            comp[j] = ncomp;
                            stack.push_back(j);
                        }
                    }
        }
    }

    if (ncomp == 0) {
        if (label_absent) *label_absent = true;
        return m;
    }
    std::int32_t best = 1;
    for (std::int32_t c = 2; c <= ncomp; ++c) {
        if (infos[c].count > infos[best].count ||
            (infos[c].count == infos[best].count && infos[c].min_coord < infos[best].min_coord)) {
            best = c;
        }
    }
    SegmentationMask out = m;
    for (std::size_t i = 0; i < n; ++i) {
        if (m.labels[i] == label && comp[i] != best) out.labels[i] = 0;
    }
    return out;
}

BoundingBox compute_bbox(const SegmentationMask& m, const std::vector<std::int32_t>& uterus_labels,
                         int crop) {
    if (crop <= 0) throw ValidationError("crop size must be positive");
    if (m.shape[0] < crop || m.shape[1] < crop) {
        throw ValidationError("volume in-plane extent smaller than crop size " +
                              std::to_string(crop));
    }
    auto is_uterus = [&](std::int32_t v) {
        return std::find(uterus_labels.begin(), uterus_labels.end(), v) != uterus_labels.end();
    };

    double sum_x = 0.0, sum_y = 0.0;
    std::size_t count = 0;
    int min_x = m.shape[0], max_x = -1, min_y = m.shape[1], max_y = -1;
    int z_lo = m.shape[2], z_hi = -1;
    std::size_t i = 0;
    for (int z = 0; z < m.shape[2]; ++z)
        for (int y = 0; y < m.shape[1]; ++y)
            for (int x = 0; x < m.shape[0]; ++x, ++i) {
                if (!is_uterus(m.labels[i])) continue;
                sum_x += x;
                sum_y += y;
                ++count;
                min_x = std::min(min_x, x);
                max_x = std::max(max_x, x);
                min_y = std::min(min_y, y);
                max_y = std::max(max_y, y);
                z_lo = std::min(z_lo, z);
                z_hi = std::max(z_hi, z);
            }
    if (count == 0) throw ValidationError("mask contains no uterus-labeled voxels");

    BoundingBox b;
    b.width = b.height = crop;
    const auto corner = [&](double centroid, int extent) {
        const int c = static_cast<int>(std::llround(centroid)) - crop / 2;
        return std::clamp(c, 0, extent - crop);
    };
    b.x0 = corner(sum_x / count, m.shape[0]);
    b.y0 = corner(sum_y / count, m.shape[1]);
    b.z_lo = z_lo;
    b.z_hi = z_hi;
    b.truncated = min_x < b.x0 || max_x >= b.x0 + crop || min_y < b.y0 || max_y >= b.y0 + crop;
    return b;
}

std::pair<Volume, SegmentationMask> crop(const Volume& v, const SegmentationMask& m,
                                         const BoundingBox& b) {
    m.check_paired(v);
    b.validate(v.shape);
    const Shape3 out_shape{b.width, b.height, b.z_hi - b.z_lo + 1};
    Volume vc(out_shape, v.spacing, v.identifier);
    SegmentationMask mc(out_shape, m.label_names, m.annotator);
    std::size_t i = 0;
    for (int z = 0; z < out_shape[2]; ++z)
        for (int y = 0; y < out_shape[1]; ++y)
            for (int x = 0; x < out_shape[0]; ++x, ++i) {
                vc.voxels[i] = v.at(b.x0 + x, b.y0 + y, b.z_lo + z);
                mc.labels[i] = m.at(b.x0 + x, b.y0 + y, b.z_lo + z);
            }
    return {std::move(vc), std::move(mc)};
}

void PreprocessOptions::validate() const {
    for (int a = 0; a < 3; ++a) {
        if (!(target_spacing[a] > 0.0)) throw ValidationError("target_spacing must be positive");
        if (working_shape[a] < 1) throw ValidationError("working_shape must be positive");
    }
    if (crop_size <= 0) throw ValidationError("crop_size must be positive");
    if (crop_size > working_shape[0] || crop_size > working_shape[1]) {
        throw ValidationError("crop_size exceeds the working in-plane shape");
    }
    if (uterus_labels.empty()) throw ValidationError("uterus_labels must be nonempty");
}

PreprocessedCase preprocess_case(const Volume& v, const std::vector<SegmentationMask>& masks,
                                 const PreprocessOptions& opt) {
    opt.validate();
    if (masks.empty()) throw ValidationError("preprocess_case needs at least one mask");
    for (const auto& m : masks) m.check_paired(v);

    Volume work = resample(v, opt.target_spacing);
    work = resize_to(work, opt.working_shape);
    work = normalize_intensity(work);

    std::vector<SegmentationMask> work_masks;
    work_masks.reserve(masks.size());
    for (const auto& m : masks) {
        SegmentationMask wm = resample_mask(m, v.spacing, opt.target_spacing);
        wm = resize_mask_to(wm, opt.working_shape);
        work_masks.push_back(std::move(wm));
    }

    PreprocessedCase out;
    for (auto& wm : work_masks) {
        for (std::int32_t label : opt.uterus_labels) {
            if (!wm.label_names.count(label)) continue;
            bool absent = false;
            wm = largest_connected_component(wm, label, &absent);
            if (absent && &wm == &work_masks.front()) out.absent_uterus_labels.push_back(label);
        }
    }

    out.box = compute_bbox(work_masks.front(), opt.uterus_labels, opt.crop_size);
    bool first = true;
    for (const auto& wm : work_masks) {
        auto [cv, cm] = crop(work, wm, out.box);
        if (first) {
            out.volume = std::move(cv);
            first = false;
        }
        out.masks.push_back(std::move(cm));
    }
    return out;
}

}  // namespace uad
