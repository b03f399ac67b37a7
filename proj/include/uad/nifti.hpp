#pragma once

#include <map>
#include <string>

#include "uad/volume.hpp"

namespace uad {

// NIfTI-1 single-file volumes (.nii / .nii.gz). Intensities are converted to
// 32-bit float on load (scl_slope/scl_inter honored); masks must hold integer
// voxel values. Orientation fields are ignored: volumes are assumed to share
// a consistent sagittal orientation.

Volume load_volume(const std::string& path);

void save_volume(const Volume& v, const std::string& path, const std::string& descrip = "");

SegmentationMask load_mask(const std::string& path,
                           const std::map<std::int32_t, std::string>& label_names,
                           const std::string& annotator);

void save_mask(const SegmentationMask& m, const std::string& path,
               Spacing spacing = {1.0, 1.0, 1.0}, const std::string& descrip = "");

}  // namespace uad
