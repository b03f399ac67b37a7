#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "uad/grid.hpp"

namespace uad {

using Spacing = std::array<double, 3>;  // (sx, sy, sz) in mm
using Shape3 = std::array<int, 3>;      // (nx, ny, nz)

/// 3D intensity grid with physical voxel spacing. Voxels are stored as
/// 32-bit floats, x fastest: voxels[x + nx*(y + ny*z)].
struct Volume {
    Shape3 shape{0, 0, 0};
    Spacing spacing{1.0, 1.0, 1.0};
    std::string identifier;
    std::vector<float> voxels;

    Volume() = default;
    Volume(Shape3 s, Spacing sp, std::string id = {});

    std::size_t index(int x, int y, int z) const {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(shape[0]) *
                   (static_cast<std::size_t>(y) + static_cast<std::size_t>(shape[1]) * z);
    }
    float& at(int x, int y, int z) { return voxels[index(x, y, z)]; }
    float at(int x, int y, int z) const { return voxels[index(x, y, z)]; }
    std::size_t size() const { return voxels.size(); }

    /// Throws DataError/ValidationError on violated invariants (positive
    /// spacing, finite voxels, shape/grid consistency).
    void validate() const;
};

/// Integer label grid paired with a Volume. 0 is background.
struct SegmentationMask {
    Shape3 shape{0, 0, 0};
    std::vector<std::int32_t> labels;
    std::map<std::int32_t, std::string> label_names;
    std::string annotator;

    SegmentationMask() = default;
    SegmentationMask(Shape3 s, std::map<std::int32_t, std::string> names,
                     std::string annot = {});

    std::size_t index(int x, int y, int z) const {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(shape[0]) *
                   (static_cast<std::size_t>(y) + static_cast<std::size_t>(shape[1]) * z);
    }
    std::int32_t& at(int x, int y, int z) { return labels[index(x, y, z)]; }
    std::int32_t at(int x, int y, int z) const { return labels[index(x, y, z)]; }
    std::size_t size() const { return labels.size(); }

    /// Every nonzero label id must be present in label_names.
    void validate() const;

    /// Throws DataError when the mask shape differs from the volume's.
    void check_paired(const Volume& v) const;

    std::size_t count_label(std::int32_t label) const;
};

enum class UterineVersion { Anteverted, Retroverted, Unknown };
enum class UterineFlexion { Anteflexed, Retroflexed, Unknown };
enum class Cohort { Healthy, UnhealthyUmd, UnhealthyInhouse, Synthetic };

const char* to_string(UterineVersion v);
const char* to_string(UterineFlexion f);
const char* to_string(Cohort c);
UterineVersion uterine_version_from_string(const std::string& s);
UterineFlexion uterine_flexion_from_string(const std::string& s);
Cohort cohort_from_string(const std::string& s);

struct CaseMetadata {
    std::string patient_key;
    double field_strength_tesla = 0.0;  // <= 0 means unknown
    UterineVersion uterine_version = UterineVersion::Unknown;
    UterineFlexion uterine_flexion = UterineFlexion::Unknown;
    Cohort cohort = Cohort::Healthy;

    bool field_strength_known() const { return field_strength_tesla > 0.0; }
    void validate() const;
};

/// One axial (z) cut of a cropped working volume, pixels in [0,1].
struct Slice2D {
    Grid2D pixels;
    std::string case_id;
    int slice_index = 0;

    Slice2D() = default;
    Slice2D(Grid2D px, std::string id, int idx)
        : pixels(std::move(px)), case_id(std::move(id)), slice_index(idx) {}

    /// Checks the [0,1] range and, when expected_size > 0, the working size.
    void validate(int expected_size = 0) const;
};

/// Read/write the sidecar metadata file (JSON, exact spec key names).
CaseMetadata load_case_metadata(const std::string& path);
void save_case_metadata(const CaseMetadata& m, const std::string& path);

}  // namespace uad
