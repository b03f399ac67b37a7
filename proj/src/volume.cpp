#include "uad/volume.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "uad/errors.hpp"

namespace uad {

Volume::Volume(Shape3 s, Spacing sp, std::string id)
    : shape(s), spacing(sp), identifier(std::move(id)) {
    if (s[0] <= 0 || s[1] <= 0 || s[2] <= 0) {
        throw ValidationError("volume shape must be positive, got (" +
                              std::to_string(s[0]) + "," + std::to_string(s[1]) + "," +
                              std::to_string(s[2]) + ")");
    }
    voxels.assign(static_cast<std::size_t>(s[0]) * s[1] * s[2], 0.0f);
}

void Volume::validate() const {
    for (int a = 0; a < 3; ++a) {
        if (!(spacing[a] > 0.0)) {
            throw ValidationError("volume '" + identifier + "': spacing component " +
                                  std::to_string(a) + " must be strictly positive, got " +
                                  std::to_string(spacing[a]));
        }
        if (shape[a] <= 0) {
            throw ValidationError("volume '" + identifier + "': shape component " +
                                  std::to_string(a) + " must be positive");
        }
    }
    const std::size_t expected = static_cast<std::size_t>(shape[0]) * shape[1] * shape[2];
    if (voxels.size() != expected) {
        throw DataError("volume '" + identifier + "': voxel grid size " +
                        std::to_string(voxels.size()) + " does not match shape product " +
                        std::to_string(expected));
    }
    for (std::size_t i = 0; i < voxels.size(); ++i) {
        if (!std::isfinite(voxels[i])) {
            throw DataError("volume '" + identifier + "': non-finite intensity at linear index " +
                            std::to_string(i));
        }
    }
}

SegmentationMask::SegmentationMask(Shape3 s, std::map<std::int32_t, std::string> names,
                                   std::string annot)
    : shape(s), label_names(std::move(names)), annotator(std::move(annot)) {
    labels.assign(static_cast<std::size_t>(s[0]) * s[1] * s[2], 0);
}

void SegmentationMask::validate() const {
    const std::size_t expected = static_cast<std::size_t>(shape[0]) * shape[1] * shape[2];
    if (labels.size() != expected) {
        throw DataError("mask: label grid size does not match shape");
    }
    std::vector<std::int32_t> unknown;
    for (std::int32_t id : labels) {
        if (id < 0) throw DataError("mask: negative label id " + std::to_string(id));
        if (id != 0 && !label_names.count(id)) {
            bool seen = false;
            for (std::int32_t u : unknown) seen |= (u == id);
            if (!seen) unknown.push_back(id);
        }
    }
    if (!unknown.empty()) {
        std::ostringstream os;
        os << "mask (annotator '" << annotator << "'): label ids not in label_names:";
        for (std::int32_t u : unknown) os << ' ' << u;
        throw DataError(os.str());
    }
}

void SegmentationMask::check_paired(const Volume& v) const {
    if (shape != v.shape) {
        throw DataError("mask shape (" + std::to_string(shape[0]) + "," +
                        std::to_string(shape[1]) + "," + std::to_string(shape[2]) +
                        ") does not match volume '" + v.identifier + "' shape (" +
                        std::to_string(v.shape[0]) + "," + std::to_string(v.shape[1]) + "," +
                        std::to_string(v.shape[2]) + ")");
    }
}

std::size_t SegmentationMask::count_label(std::int32_t label) const {
    std::size_t n = 0;
    for (std::int32_t id : labels) n += (id == label);
    return n;
}

const char* to_string(UterineVersion v) {
    switch (v) {
        case UterineVersion::Anteverted: return "anteverted";
        case UterineVersion::Retroverted: return "retroverted";
        default: return "unknown";
    }
}

const char* to_string(UterineFlexion f) {
    switch (f) {
        case UterineFlexion::Anteflexed: return "anteflexed";
        case UterineFlexion::Retroflexed: return "retroflexed";
        default: return "unknown";
    }
}

const char* to_string(Cohort c) {
    switch (c) {
        case Cohort::Healthy: return "healthy";
        case Cohort::UnhealthyUmd: return "unhealthy_umd";
        case Cohort::UnhealthyInhouse: return "unhealthy_inhouse";
        default: return "synthetic";
    }
}

UterineVersion uterine_version_from_string(const std::string& s) {
    if (s == "anteverted") return UterineVersion::Anteverted;
    if (s == "retroverted") return UterineVersion::Retroverted;
    if (s == "unknown") return UterineVersion::Unknown;
    throw ValidationError("invalid uterine_version value: '" + s + "'");
}

UterineFlexion uterine_flexion_from_string(const std::string& s) {
    if (s == "anteflexed") return UterineFlexion::Anteflexed;
    if (s == "retroflexed") return UterineFlexion::Retroflexed;
    if (s == "unknown") return UterineFlexion::Unknown;
    throw ValidationError("invalid uterine_flexion value: '" + s + "'");
}

Cohort cohort_from_string(const std::string& s) {
    if (s == "healthy") return Cohort::Healthy;
    if (s == "unhealthy_umd") return Cohort::UnhealthyUmd;
    if (s == "unhealthy_inhouse") return Cohort::UnhealthyInhouse;
    if (s == "synthetic") return Cohort::Synthetic;
    throw ValidationError("invalid cohort value: '" + s + "'");
}

void CaseMetadata::validate() const {
    if (patient_key.empty()) throw ValidationError("metadata: patient_key must be nonempty");
    if (std::isnan(field_strength_tesla)) {
        throw ValidationError("metadata: field_strength_tesla must be a number or <= 0 for unknown");
    }
}

void Slice2D::validate(int expected_size) const {
    if (expected_size > 0 && (pixels.w != expected_size || pixels.h != expected_size)) {
        throw DataError("slice " + case_id + "[" + std::to_string(slice_index) +
                        "]: shape (" + std::to_string(pixels.w) + "," +
                        std::to_string(pixels.h) + ") differs from working size " +
                        std::to_string(expected_size));
    }
    for (double p : pixels.v) {
        if (!(p >= 0.0 && p <= 1.0)) {
            throw DataError("slice " + case_id + "[" + std::to_string(slice_index) +
                            "]: pixel outside [0,1]: " + std::to_string(p));
        }
    }
}

CaseMetadata load_case_metadata(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open metadata file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw DataError("metadata file " + path + ": " + e.what());
    }
    static const char* known[] = {"patient_key", "field_strength_tesla", "uterine_version",
                                  "uterine_flexion", "cohort"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : known) ok |= (it.key() == k);
        if (!ok) throw ValidationError("metadata file " + path + ": unknown key '" + it.key() + "'");
    }
    CaseMetadata m;
    m.patient_key = j.value("patient_key", std::string());
    m.field_strength_tesla = j.value("field_strength_tesla", 0.0);
    m.uterine_version = uterine_version_from_string(j.value("uterine_version", std::string("unknown")));
    m.uterine_flexion = uterine_flexion_from_string(j.value("uterine_flexion", std::string("unknown")));
    m.cohort = cohort_from_string(j.value("cohort", std::string("healthy")));
    m.validate();
    return m;
}

void save_case_metadata(const CaseMetadata& m, const std::string& path) {
    m.validate();
    nlohmann::json j;
    j["patient_key"] = m.patient_key;
    j["field_strength_tesla"] = m.field_strength_tesla;
    j["uterine_version"] = to_string(m.uterine_version);
    j["uterine_flexion"] = to_string(m.uterine_flexion);
    j["cohort"] = to_string(m.cohort);
    std::ofstream out(path);
    if (!out) throw IoError("cannot write metadata file: " + path);
    out << j.dump(2) << '\n';
}

}  // namespace uad
