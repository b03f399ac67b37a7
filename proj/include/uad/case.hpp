#pragma once

#include <string>
#include <vector>

#include "uad/volume.hpp"

namespace uad {

/// A volume plus one labeled mask per annotator and acquisition metadata.
struct AnnotatedCase {
    Volume volume;
    std::vector<SegmentationMask> masks;  // mask.annotator identifies the rater
    CaseMetadata metadata;

    void validate() const;
};

}  // namespace uad
