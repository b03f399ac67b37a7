#include "uad/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "uad/clahe.hpp"
#include "uad/errors.hpp"

namespace uad {

void SplitSpec::validate() const {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw ValidationError("train_fraction must lie in (0,1)");
    }
}

PatientSplit split_patients(const std::vector<CaseKey>& cases, const SplitSpec& spec) {
    spec.validate();
    std::set<std::string> unique;
    for (const CaseKey& c : cases) {
        if (c.patient_key.empty()) throw ValidationError("case '" + c.case_id +
                                                         "' has an empty patient key");
        unique.insert(c.patient_key);
    }
    if (unique.size() < 2) {
        throw DataError("patient-level split needs at least 2 distinct patients, found " +
                        std::to_string(unique.size()));
    }
    std::vector<std::string> patients(unique.begin(), unique.end());
    RandomStream rs(fanout_seed(spec.seed, "patient-split"));
    rs.shuffle(patients);

    const auto n = static_cast<long long>(patients.size());
    long long n_train = std::llround(spec.train_fraction * static_cast<double>(n));
    n_train = std::clamp(n_train, 1LL, n - 1);

    PatientSplit out;
    std::set<std::string> train_set(patients.begin(), patients.begin() + n_train);
    for (const CaseKey& c : cases) {
        if (train_set.count(c.patient_key)) {
            out.train.push_back(c);
        } else {
            out.val.push_back(c);
        }
    }
    out.train_patients.assign(train_set.begin(), train_set.end());
    std::set<std::string> val_set(patients.begin() + n_train, patients.end());
    out.val_patients.assign(val_set.begin(), val_set.end());
    return out;
}

std::vector<Slice2D> extract_slices(const Volume& v, int expected_in_plane) {
    if (v.shape[0] != expected_in_plane || v.shape[1] != expected_in_plane) {
        throw DataError("volume '" + v.identifier + "' has in-plane shape " +
                        std::to_string(v.shape[0]) + "x" + std::to_string(v.shape[1]) +
                        ", expected " + std::to_string(expected_in_plane) + "x" +
                        std::to_string(expected_in_plane));
    }
    std::vector<Slice2D> out;
    out.reserve(v.shape[2]);
    for (int z = 0; z < v.shape[2]; ++z) {
        Grid2D g(v.shape[0], v.shape[1]);
        for (int y = 0; y < v.shape[1]; ++y) {
            for (int x = 0; x < v.shape[0]; ++x) g.at(x, y) = v.at(x, y, z);
        }
        Slice2D s(std::move(g), v.identifier, z);
        s.validate(expected_in_plane);
        out.push_back(std::move(s));
    }
    return out;
}

Grid2D hflip(const Grid2D& g) {
    Grid2D out(g.w, g.h);
    for (int y = 0; y < g.h; ++y) {
        for (int x = 0; x < g.w; ++x) out.at(x, y) = g.at(g.w - 1 - x, y);
    }
    return out;
}

Grid2D vflip(const Grid2D& g) {
    Grid2D out(g.w, g.h);
    for (int y = 0; y < g.h; ++y) {
        for (int x = 0; x < g.w; ++x) out.at(x, y) = g.at(x, g.h - 1 - y);
    }
    return out;
}

void AugmentationPolicy::validate() const {
    auto prob = [](double p, const char* name) {
        if (!(p >= 0.0 && p <= 1.0)) {
            throw ValidationError(std::string(name) + " must lie in [0,1]");
        }
    };
    prob(p_hflip, "p_hflip");
    prob(p_vflip, "p_vflip");
    prob(p_clahe, "p_clahe");
    if (!(clahe_clip > 0.0 && clahe_clip <= 1.0)) {
        throw ValidationError("clahe_clip must lie in (0,1]");
    }
    if (copies_per_slice < 0) throw ValidationError("copies_per_slice must be nonnegative");
    if (clahe_tiles < 1) throw ValidationError("clahe_tiles must be positive");
    if (clahe_bins < 2) throw ValidationError("clahe_bins must be >= 2");
}

std::vector<Slice2D> augment(const Slice2D& s, const AugmentationPolicy& policy,
                             RandomStream& draw) {
    policy.validate();
    std::vector<Slice2D> out;
    out.reserve(policy.copies_per_slice);
    for (int k = 0; k < policy.copies_per_slice; ++k) {
        Grid2D g = s.pixels;
        if (draw.bernoulli(policy.p_hflip)) g = hflip(g);
        if (draw.bernoulli(policy.p_vflip)) g = vflip(g);
        if (draw.bernoulli(policy.p_clahe)) {
            g = clahe(g, policy.clahe_clip, policy.clahe_tiles, policy.clahe_bins);
        }
        out.emplace_back(std::move(g), s.case_id, s.slice_index);
    }
    return out;
}

std::vector<Slice2D> expand_training_set(const std::vector<Slice2D>& slices,
                                         const AugmentationPolicy& policy) {
    policy.validate();
    std::vector<Slice2D> out;
    out.reserve(slices.size() * (1 + policy.copies_per_slice));
    for (std::size_t i = 0; i < slices.size(); ++i) {
        out.push_back(slices[i]);
        RandomStream rs(fanout_seed(policy.seed, "augment", i));
        std::vector<Slice2D> copies = augment(slices[i], policy, rs);
        std::move(copies.begin(), copies.end(), std::back_inserter(out));
    }
    return out;
}

std::vector<std::vector<Slice2D>> make_batches(const std::vector<Slice2D>& slices,
                                               int batch_size, std::uint64_t seed) {
    if (slices.empty()) throw DataError("cannot batch an empty slice list");
    if (batch_size < 1) throw ValidationError("batch_size must be positive");
    std::vector<int> idx(slices.size());
    std::iota(idx.begin(), idx.end(), 0);
    RandomStream rs(fanout_seed(seed, "batch-shuffle"));
    rs.shuffle(idx);
    std::vector<std::vector<Slice2D>> out;
    for (std::size_t lo = 0; lo < idx.size(); lo += batch_size) {
        const std::size_t hi = std::min(lo + batch_size, idx.size());
        std::vector<Slice2D> batch;
        batch.reserve(hi - lo);
        for (std::size_t i = lo; i < hi; ++i) batch.push_back(slices[idx[i]]);
        out.push_back(std::move(batch));
    }
    return out;
}

}  // namespace uad
