#include <cmath>
#include <numeric>

#include "doctest.h"
#include "test_helpers.hpp"
#include "uad/errors.hpp"
#include "uad/preprocess.hpp"

using namespace uad;

namespace {

SegmentationMask blank_mask(Shape3 shape, std::map<std::int32_t, std::string> names = {
                                              {1, "uterus"}}) {
    SegmentationMask m;
    m.shape = shape;
    m.labels.assign(static_cast<std::size_t>(shape[0]) * shape[1] * shape[2], 0);
    m.label_names = std::move(names);
    m.annotator = "r1";
    return m;
}

std::size_t idx(const Shape3& s, int x, int y, int z) {
    return (static_cast<std::size_t>(z) * s[1] + y) * s[0] + x;
}

}  // namespace

TEST_CASE("resample shape arithmetic: (128,128,10)@(1,1,3) -> (0.5,0.5,1) gives (256,256,30)") {
    const Volume v = uadtest::constant_volume(128, 128, 10, 0.25f, {1.0, 1.0, 3.0});
    const Volume r = resample(v, {0.5, 0.5, 1.0});
    CHECK(r.shape == Shape3{256, 256, 30});
    CHECK(r.spacing == Spacing{0.5, 0.5, 1.0});
    for (float x : r.voxels) CHECK(x == doctest::Approx(0.25).epsilon(1e-7));
}

TEST_CASE("resample to the input spacing is the identity") {
    Volume v = uadtest::constant_volume(6, 5, 4, 0.0f, {1.0, 2.0, 3.0});
    for (std::size_t i = 0; i < v.voxels.size(); ++i) v.voxels[i] = static_cast<float>(i % 13);
    const Volume r = resample(v, v.spacing);
    CHECK(r.shape == v.shape);
    CHECK(r.voxels == v.voxels);
}

TEST_CASE("resample is idempotent on constant and linear-ramp volumes") {
    Volume ramp = uadtest::constant_volume(16, 16, 6, 0.0f, {1.0, 1.0, 2.0});
    for (int z = 0; z < 6; ++z)
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x)
                ramp.voxels[idx(ramp.shape, x, y, z)] = static_cast<float>(x + 2 * y + 3 * z);
    const Volume once = resample(ramp, {0.8, 0.8, 1.0});
    const Volume twice = resample(once, {0.8, 0.8, 1.0});
    REQUIRE(once.shape == twice.shape);
    for (std::size_t i = 0; i < once.voxels.size(); ++i) {
        CHECK(std::abs(once.voxels[i] - twice.voxels[i]) <= 1e-6);
    }
}

TEST_CASE("degenerate resample target is rejected") {
    const Volume v = uadtest::constant_volume(4, 4, 2, 0.0f, {1.0, 1.0, 1.0});
    CHECK_THROWS_AS(resample(v, {100.0, 1.0, 1.0}), ValidationError);
}

TEST_CASE("resize_to hits the requested shape and rescales spacing") {
    const Volume v = uadtest::constant_volume(512, 512, 60, 0.7f, {0.5, 0.5, 2.0});
    const Volume r = resize_to(v, {256, 256, 30});
    CHECK(r.shape == Shape3{256, 256, 30});
    // spacing after resize = old_spacing * old_shape / new_shape
    CHECK(r.spacing[0] == doctest::Approx(0.5 * 512.0 / 256.0));
    CHECK(r.spacing[1] == doctest::Approx(0.5 * 512.0 / 256.0));
    CHECK(r.spacing[2] == doctest::Approx(2.0 * 60.0 / 30.0));
    for (float x : r.voxels) CHECK(x == doctest::Approx(0.7).epsilon(1e-6));

    const Volume same = resize_to(r, r.shape);
    CHECK(same.voxels == r.voxels);
}

TEST_CASE("normalize_intensity maps {2,4,6} to {0,0.5,1} and is idempotent") {
    Volume v = uadtest::constant_volume(3, 1, 1, 0.0f);
    v.voxels = {2.0f, 4.0f, 6.0f};
    const Volume n = normalize_intensity(v);
    CHECK(n.voxels[0] == 0.0f);
    CHECK(n.voxels[1] == 0.5f);
    CHECK(n.voxels[2] == 1.0f);

    const Volume again = normalize_intensity(n);
    CHECK(again.voxels == n.voxels);

    Volume constant = uadtest::constant_volume(4, 4, 2, 3.5f);
    const Volume z = normalize_intensity(constant);
    for (float x : z.voxels) CHECK(x == 0.0f);
}

TEST_CASE("largest_connected_component keeps the biggest component only") {
    SegmentationMask m = blank_mask({10, 10, 3});
    // Component A: 6 voxels in slice 0; component B: 2 voxels in slice 2
    // (z-separation > 1 keeps them disconnected under 26-connectivity).
    for (int x = 0; x < 6; ++x) m.labels[idx(m.shape, x, 0, 0)] = 1;
    m.labels[idx(m.shape, 9, 9, 2)] = 1;
    m.labels[idx(m.shape, 8, 9, 2)] = 1;

    const SegmentationMask f = largest_connected_component(m, 1);
    CHECK(f.count_label(1) == 6);
    CHECK(f.labels[idx(m.shape, 9, 9, 2)] == 0);
    CHECK(f.labels[idx(m.shape, 0, 0, 0)] == 1);
}

TEST_CASE("largest_connected_component: single component unchanged, other labels untouched") {
    SegmentationMask m = blank_mask({8, 8, 2}, {{1, "uterus"}, {2, "myoma"}});
    m.labels[idx(m.shape, 1, 1, 0)] = 1;
    m.labels[idx(m.shape, 2, 1, 0)] = 1;
    m.labels[idx(m.shape, 6, 6, 1)] = 2;  // different label, far away
    const SegmentationMask f = largest_connected_component(m, 1);
    CHECK(f.labels == m.labels);
    CHECK(f.count_label(2) == 1);
}

TEST_CASE("largest_connected_component tie-break keeps the lexicographically least component") {
    SegmentationMask m = blank_mask({10, 4, 1});
    m.labels[idx(m.shape, 1, 1, 0)] = 1;  // component with min voxel (1,1,0)
    m.labels[idx(m.shape, 7, 1, 0)] = 1;  // same size, min voxel (7,1,0)
    const SegmentationMask f = largest_connected_component(m, 1);
    CHECK(f.count_label(1) == 1);
    CHECK(f.labels[idx(m.shape, 1, 1, 0)] == 1);
    CHECK(f.labels[idx(m.shape, 7, 1, 0)] == 0);
}

TEST_CASE("largest_connected_component flags an absent label and returns the mask unchanged") {
    SegmentationMask m = blank_mask({4, 4, 1});
    bool absent = false;
    const SegmentationMask f = largest_connected_component(m, 1, &absent);
    CHECK(absent);
    CHECK(f.labels == m.labels);
}

TEST_CASE("lcc never increases the filtered label's voxel count (random masks)") {
    RandomStream rs(99);
    for (int trial = 0; trial < 5; ++trial) {
        SegmentationMask m = blank_mask({12, 12, 4});
        for (auto& l : m.labels) l = rs.bernoulli(0.2) ? 1 : 0;
        const auto before = m.count_label(1);
        const SegmentationMask f = largest_connected_component(m, 1);
        CHECK(f.count_label(1) <= before);
    }
}

TEST_CASE("compute_bbox centers on the centroid and clamps at edges") {
    SegmentationMask m = blank_mask({256, 256, 30});
    m.labels[idx(m.shape, 128, 128, 15)] = 1;
    const BoundingBox b = compute_bbox(m, {1}, 96);
    CHECK(b.x0 == 80);
    CHECK(b.y0 == 80);
    CHECK(b.width == 96);
    CHECK(b.height == 96);
    CHECK(b.z_lo == 15);
    CHECK(b.z_hi == 15);

    SegmentationMask span = blank_mask({256, 256, 30});
    for (int z = 5; z <= 20; ++z) span.labels[idx(span.shape, 100, 100, z)] = 1;
    const BoundingBox bs = compute_bbox(span, {1}, 96);
    CHECK(bs.z_lo == 5);
    CHECK(bs.z_hi == 20);

    SegmentationMask edge = blank_mask({256, 256, 30});
    edge.labels[idx(edge.shape, 2, 254, 0)] = 1;
    const BoundingBox be = compute_bbox(edge, {1}, 96);
    CHECK(be.x0 == 0);            // clamped low
    CHECK(be.y0 == 256 - 96);     // clamped high
    CHECK_NOTHROW(be.validate(edge.shape));

    SegmentationMask empty = blank_mask({16, 16, 2});
    CHECK_THROWS_AS(compute_bbox(empty, {1}, 8), ValidationError);
}

TEST_CASE("crop maps coordinates as expected and is idempotent") {
    const Shape3 shape{256, 256, 30};
    Volume v = uadtest::constant_volume(shape[0], shape[1], shape[2], 0.0f);
    SegmentationMask m = blank_mask(shape);
    v.voxels[idx(shape, 100, 90, 7)] = 1.0f;
    m.labels[idx(shape, 100, 90, 7)] = 1;

    BoundingBox b;
    b.x0 = 80;
    b.y0 = 80;
    b.width = 96;
    b.height = 96;
    b.z_lo = 5;
    b.z_hi = 14;

    const auto [cv, cm] = crop(v, m, b);
    CHECK(cv.shape == Shape3{96, 96, 10});
    CHECK(cm.shape == cv.shape);
    CHECK(cv.voxels[idx(cv.shape, 20, 10, 2)] == 1.0f);
    CHECK(cm.labels[idx(cm.shape, 20, 10, 2)] == 1);
    CHECK(cm.count_label(1) == 1);  // fully contained -> count preserved

    // Full-volume box is the identity crop.
    BoundingBox full;
    full.x0 = 0;
    full.y0 = 0;
    full.width = shape[0];
    full.height = shape[1];
    full.z_lo = 0;
    full.z_hi = shape[2] - 1;
    const auto [fv, fm] = crop(v, m, full);
    CHECK(fv.voxels == v.voxels);
    CHECK(fm.labels == m.labels);

    // Re-cropping the crop with its own full box changes nothing.
    BoundingBox again;
    again.x0 = 0;
    again.y0 = 0;
    again.width = 96;
    again.height = 96;
    again.z_lo = 0;
    again.z_hi = 9;
    const auto [cv2, cm2] = crop(cv, cm, again);
    CHECK(cv2.voxels == cv.voxels);
    CHECK(cm2.labels == cm.labels);
}

TEST_CASE("preprocess_case runs the full chain and reports absent labels") {
    // 48x48x8 raw volume at (1,1,1) -> resample (0.5) would give 96x96x8 but
    // the working shape forces (32,32,8); crop 16 around the blob.
    const Shape3 raw{48, 48, 8};
    Volume v = uadtest::constant_volume(raw[0], raw[1], raw[2], 0.2f, {1.0, 1.0, 1.0});
    SegmentationMask m = blank_mask(raw, {{1, "uterus"}, {2, "junctional_zone"}, {3, "m"}});
    for (int z = 2; z <= 5; ++z)
        for (int y = 20; y < 28; ++y)
            for (int x = 20; x < 28; ++x) {
                v.voxels[idx(raw, x, y, z)] = 0.9f;
                m.labels[idx(raw, x, y, z)] = 1;
            }

    PreprocessOptions opt;
    opt.target_spacing = {1.0, 1.0, 1.0};
    opt.working_shape = {32, 32, 8};
    opt.crop_size = 16;
    opt.uterus_labels = {1, 2, 3};

    const PreprocessedCase pc = preprocess_case(v, {m}, opt);
    CHECK(pc.volume.shape == Shape3{16, 16, 4});
    REQUIRE(pc.masks.size() == 1);
    CHECK(pc.masks[0].shape == pc.volume.shape);
    CHECK(pc.box.width == 16);
    CHECK(pc.box.z_lo == 2);
    CHECK(pc.box.z_hi == 5);
    CHECK(!pc.box.truncated);
    // Labels 2 and 3 never appear in the mask.
    CHECK(pc.absent_uterus_labels == std::vector<std::int32_t>{2, 3});
    // Intensities normalized to [0,1]; the crop contains both the global
    // extremes (blob interior and pure background) up to interpolation noise.
    float mn = 1e9f, mx = -1e9f;
    for (float x : pc.volume.voxels) {
        mn = std::min(mn, x);
        mx = std::max(mx, x);
    }
    CHECK(mn >= 0.0f);
    CHECK(mx <= 1.0f);
    CHECK(mn < 0.01f);
    CHECK(mx > 0.99f);
}
