#include "uad/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "uad/errors.hpp"
#include "uad/ioutil.hpp"
#include "uad/nifti.hpp"
#include "uad/rng.hpp"

namespace uad {

void AnnotatedCase::validate() const {
    volume.validate();
    metadata.validate();
    if (masks.empty()) throw DataError("case '" + volume.identifier + "' has no masks");
    for (const SegmentationMask& m : masks) {
        if (m.annotator.empty()) {
            throw DataError("case '" + volume.identifier + "' has a mask without an annotator");
        }
        m.validate();
        m.check_paired(volume);
    }
}

namespace {

constexpr int kSize = 96;
constexpr int kDepth = 8;

constexpr std::int32_t kEndometrium = 1;
constexpr std::int32_t kJunctionalZone = 2;
constexpr std::int32_t kMyometrium = 3;
constexpr std::int32_t kLesionDisc = 4;
constexpr std::int32_t kLesionDiffuse = 5;

struct PhantomGeometry {
    double cx, cy;        // ellipse center (in-plane)
    double ax, ay;        // semi-axes
    double tilt;          // in-plane rotation, radians
    double tex_fx, tex_fy, tex_px, tex_py;  // texture frequencies/phases
};

/// Normalized elliptical radius of (x,y) at slice z; <= 1 means inside.
double rho_at(const PhantomGeometry& g, double x, double y, int z) {
    const double zc = (z + 0.5) / kDepth;
    const double bulge = 0.85 + 0.3 * std::sin(3.14159265358979323846 * zc);
    const double dx = x - g.cx;
    const double dy = y - g.cy;
    const double c = std::cos(g.tilt), s = std::sin(g.tilt);
    const double u = (c * dx + s * dy) / (g.ax * bulge);
    const double v = (-s * dx + c * dy) / (g.ay * bulge);
    return std::sqrt(u * u + v * v);
}

/// Grows the given label by one voxel in-plane (8-neighborhood), per slice.
void dilate_label_inplane(SegmentationMask& m, std::int32_t label) {
    std::vector<std::int32_t> src = m.labels;
    auto at_src = [&](int x, int y, int z) {
        return src[static_cast<std::size_t>(z) * m.shape[0] * m.shape[1] +
                   static_cast<std::size_t>(y) * m.shape[0] + x];
    };
    for (int z = 0; z < m.shape[2]; ++z) {
        for (int y = 0; y < m.shape[1]; ++y) {
            for (int x = 0; x < m.shape[0]; ++x) {
                if (at_src(x, y, z) == label) continue;
                bool near = false;
                for (int dy = -1; dy <= 1 && !near; ++dy) {
                    for (int dx = -1; dx <= 1 && !near; ++dx) {
                        const int xx = x + dx, yy = y + dy;
                        if (xx < 0 || yy < 0 || xx >= m.shape[0] || yy >= m.shape[1]) continue;
                        near = at_src(xx, yy, z) == label;
                    }
                }
                if (near) m.at(x, y, z) = label;
            }
        }
    }
}

}  // namespace

std::vector<AnnotatedCase> make_phantom_corpus(int n_cases, std::uint64_t seed,
                                               const std::string& lesion,
                                               const std::string& id_prefix) {
    if (n_cases < 1) throw ValidationError("phantom corpus needs n_cases >= 1");
    if (lesion != "none" && lesion != "disc" && lesion != "diffuse") {
        throw ValidationError("lesion must be one of none|disc|diffuse");
    }

    std::vector<AnnotatedCase> cases;
    cases.reserve(n_cases);
    for (int i = 0; i < n_cases; ++i) {
        RandomStream rs(fanout_seed(seed, "phantom", i));

        PhantomGeometry g;
        g.cx = kSize / 2.0 + rs.uniform(-3.0, 3.0);
        g.cy = kSize / 2.0 + rs.uniform(-3.0, 3.0);
        g.ax = rs.uniform(26.0, 32.0);
        g.ay = rs.uniform(18.0, 24.0);

        CaseMetadata meta;
        char idbuf[32];
        std::snprintf(idbuf, sizeof idbuf, "-%04d", i);
        const std::string case_id = id_prefix + idbuf;
        meta.patient_key = case_id + "-pat";
        meta.field_strength_tesla = rs.bernoulli(0.5) ? 3.0 : 1.5;
        meta.uterine_version = rs.bernoulli(0.5) ? UterineVersion::Anteverted
                                                 : UterineVersion::Retroverted;
        meta.uterine_flexion = rs.bernoulli(0.5) ? UterineFlexion::Anteflexed
                                                 : UterineFlexion::Retroflexed;
        meta.cohort = lesion == "none" ? Cohort::Healthy : Cohort::UnhealthyUmd;

        // Orientation tags slightly tilt the geometry so position strata see
        // genuinely different (but still learnable) shapes.
        double tilt = rs.uniform(-0.06, 0.06);
        tilt += meta.uterine_version == UterineVersion::Anteverted ? 0.18 : -0.18;
        tilt += meta.uterine_flexion == UterineFlexion::Anteflexed ? 0.07 : -0.07;
        g.tilt = tilt;
        g.tex_fx = rs.uniform(0.04, 0.07);
        g.tex_fy = rs.uniform(0.04, 0.07);
        g.tex_px = rs.uniform(0.0, 1.0);
        g.tex_py = rs.uniform(0.0, 1.0);

        Volume vol;
        vol.shape = {kSize, kSize, kDepth};
        vol.spacing = {0.5, 0.5, 1.0};
        vol.identifier = case_id;
        vol.voxels.assign(static_cast<std::size_t>(kSize) * kSize * kDepth, 0.0f);

        SegmentationMask exact;
        exact.shape = vol.shape;
        exact.labels.assign(vol.voxels.size(), 0);
        exact.label_names = {{kEndometrium, "endometrium"},
                             {kJunctionalZone, "junctional_zone"},
                             {kMyometrium, "myometrium"}};

        for (int z = 0; z < kDepth; ++z) {
            for (int y = 0; y < kSize; ++y) {
                for (int x = 0; x < kSize; ++x) {
                    const double rho = rho_at(g, x, y, z);
                    double v = 0.12 + 0.02 * (static_cast<double>(x) / kSize);
                    std::int32_t lab = 0;
                    if (rho < 0.35) {
                        v = 0.85;
                        lab = kEndometrium;
                    } else if (rho < 0.55) {
                        v = 0.25;
                        lab = kJunctionalZone;
                    } else if (rho <= 1.0) {
                        v = 0.55;
                        lab = kMyometrium;
                    }
                    const double tex =
                        0.04 * std::sin(2 * 3.14159265358979323846 * (x * g.tex_fx + g.tex_px)) *
                        std::sin(2 * 3.14159265358979323846 * (y * g.tex_fy + g.tex_py));
                    const double noise = 0.01 * (rs.uniform() - 0.5);
                    vol.at(x, y, z) = static_cast<float>(std::clamp(v + tex + noise, 0.0, 1.0));
                    exact.at(x, y, z) = lab;
                }
            }
        }

        if (lesion == "disc") {
            exact.label_names[kLesionDisc] = "lesion_disc";
            const double ang = rs.uniform(0.0, 2 * 3.14159265358979323846);
            const double rad_frac = rs.uniform(0.45, 0.75);
            const double radius = rs.uniform(4.0, 7.0);
            // Place the disc on the mid-band ring of the central slices.
            const double lx = g.cx + std::cos(ang) * rad_frac * g.ax * 0.9;
            const double ly = g.cy + std::sin(ang) * rad_frac * g.ay * 0.9;
            const int z_lo = 2, z_hi = 5;
            for (int z = z_lo; z <= z_hi; ++z) {
                for (int y = 0; y < kSize; ++y) {
                    for (int x = 0; x < kSize; ++x) {
                        const double d = std::hypot(x - lx, y - ly);
                        if (d > radius) continue;
                        if (rho_at(g, x, y, z) > 1.0) continue;  // keep inside the organ
                        vol.at(x, y, z) = 0.95f;
                        exact.at(x, y, z) = kLesionDisc;
                    }
                }
            }
        } else if (lesion == "diffuse") {
            exact.label_names[kLesionDiffuse] = "lesion_diffuse";
            const double ang0 = rs.uniform(0.0, 2 * 3.14159265358979323846);
            const double span = rs.uniform(1.2, 1.8);  // radians of affected sector
            for (int z = 0; z < kDepth; ++z) {
                for (int y = 0; y < kSize; ++y) {
                    for (int x = 0; x < kSize; ++x) {
                        const double rho = rho_at(g, x, y, z);
                        if (rho < 0.3 || rho > 0.9) continue;
                        double a = std::atan2(y - g.cy, x - g.cx) - ang0;
                        while (a < 0) a += 2 * 3.14159265358979323846;
                        if (a > span) continue;
                        const double bump = 0.05 * std::sin(3.14159265358979323846 * a / span);
                        vol.at(x, y, z) = static_cast<float>(
                            std::clamp(vol.at(x, y, z) + bump, 0.0, 1.0));
                        exact.at(x, y, z) = kLesionDiffuse;
                    }
                }
            }
        }

        AnnotatedCase c;
        c.volume = std::move(vol);
        c.metadata = meta;

        SegmentationMask r1 = exact;
        r1.annotator = "r1";
        c.masks.push_back(std::move(r1));
        if (lesion != "none") {
            const std::int32_t lesion_id = lesion == "disc" ? kLesionDisc : kLesionDiffuse;
            SegmentationMask r2 = exact;
            r2.annotator = "r2";
            dilate_label_inplane(r2, lesion_id);
            SegmentationMask uo = r2;
            uo.annotator = "uo";
            dilate_label_inplane(uo, lesion_id);
            c.masks.push_back(std::move(r2));
            c.masks.push_back(std::move(uo));
        }
        c.validate();
        cases.push_back(std::move(c));
    }
    return cases;
}

void write_phantom_corpus(const std::vector<AnnotatedCase>& cases, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create corpus directory '" + dir + "': " + ec.message());
    for (const AnnotatedCase& c : cases) {
        const fs::path case_dir = fs::path(dir) / c.volume.identifier;
        fs::create_directories(case_dir, ec);
        if (ec) {
            throw IoError("cannot create case directory '" + case_dir.string() +
                          "': " + ec.message());
        }
        save_volume(c.volume, (case_dir / "volume.nii.gz").string());
        nlohmann::json names = nlohmann::json::object();
        for (const SegmentationMask& m : c.masks) {
            save_mask(m, (case_dir / ("mask_" + m.annotator + ".nii.gz")).string(),
                      c.volume.spacing);
            for (const auto& [id, name] : m.label_names) names[std::to_string(id)] = name;
        }
        write_json_file((case_dir / "labels.json").string(), names);
        save_case_metadata(c.metadata, (case_dir / "metadata.json").string());
    }
}

}  // namespace uad
