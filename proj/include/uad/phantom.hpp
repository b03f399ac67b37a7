#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uad/case.hpp"

namespace uad {

/// Synthetic 96x96x8 pelvic phantoms: an elliptical banded "uterus"
/// (endometrium / junctional zone / myometrium) with optional lesions.
/// `lesion` is one of none | disc | diffuse; `disc` injects one high-contrast
/// circle per affected slice, `diffuse` a broad low-contrast perturbation.
/// Three annotators are emitted: r1 (exact), r2 and uo (increasingly dilated
/// lesion outlines).
std::vector<AnnotatedCase> make_phantom_corpus(int n_cases, std::uint64_t seed,
                                               const std::string& lesion,
                                               const std::string& id_prefix = "phantom");

/// Writes one directory per case: volume.nii.gz, mask_<annotator>.nii.gz,
/// labels.json (id -> name), and metadata.json.
void write_phantom_corpus(const std::vector<AnnotatedCase>& cases, const std::string& dir);

}  // namespace uad
