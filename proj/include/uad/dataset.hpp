#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "uad/grid.hpp"
#include "uad/rng.hpp"
#include "uad/volume.hpp"

namespace uad {

struct SplitSpec {
    double train_fraction = 0.8;
    std::uint64_t seed = 0;

    void validate() const;
};

struct CaseKey {
    std::string case_id;
    std::string patient_key;
};

struct PatientSplit {
    std::vector<CaseKey> train;
    std::vector<CaseKey> val;
    std::vector<std::string> train_patients;  // sorted
    std::vector<std::string> val_patients;    // sorted
};

/// Partitions cases by patient so no patient spans both sides. The number of
/// training patients is round(train_fraction * patients), clamped so both
/// partitions stay nonempty.
PatientSplit split_patients(const std::vector<CaseKey>& cases, const SplitSpec& spec);

/// One slice per z index, order preserved. The volume must already be cropped
/// to the working in-plane size and normalized to [0,1].
std::vector<Slice2D> extract_slices(const Volume& v, int expected_in_plane = 96);

Grid2D hflip(const Grid2D& g);
Grid2D vflip(const Grid2D& g);

struct AugmentationPolicy {
    double p_hflip = 0.9;
    double p_vflip = 0.7;
    double p_clahe = 0.7;
    double clahe_clip = 0.03;
    int copies_per_slice = 3;
    std::uint64_t seed = 0;
    int clahe_tiles = 8;
    int clahe_bins = 256;

    void validate() const;
};

/// Generates copies_per_slice stochastic copies; each copy independently
/// applies hflip/vflip/CLAHE with the policy probabilities. The input slice
/// itself is not included (callers retain originals).
std::vector<Slice2D> augment(const Slice2D& s, const AugmentationPolicy& policy,
                             RandomStream& draw);

/// Originals plus augmented copies for every slice, with a deterministic
/// per-slice random stream fanned out from the policy seed.
std::vector<Slice2D> expand_training_set(const std::vector<Slice2D>& slices,
                                         const AugmentationPolicy& policy);

/// Global shuffle under the seed, then consecutive batches; the final batch
/// may be partial. Every slice appears exactly once.
std::vector<std::vector<Slice2D>> make_batches(const std::vector<Slice2D>& slices,
                                               int batch_size, std::uint64_t seed);

}  // namespace uad
