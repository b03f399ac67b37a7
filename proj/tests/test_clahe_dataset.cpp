#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "doctest.h"
#include "test_helpers.hpp"
#include "uad/clahe.hpp"
#include "uad/dataset.hpp"
#include "uad/errors.hpp"

using namespace uad;

TEST_CASE("clahe leaves a constant image unchanged and stays inside [0,1]") {
    Grid2D flat(32, 32, 0.42);
    const Grid2D out = clahe(flat, 0.03, 4, 64);
    CHECK(out.v == flat.v);

    const Grid2D noisy = uadtest::random_grid(64, 64, 7);
    const Grid2D eq = clahe(noisy, 0.03, 8, 256);
    REQUIRE(eq.w == 64);
    REQUIRE(eq.h == 64);
    for (double v : eq.v) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("clahe is deterministic and actually changes a low-contrast image") {
    // Low-contrast ramp squeezed into [0.4, 0.6].
    Grid2D g(32, 32, 0.0);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) g.at(x, y) = 0.4 + 0.2 * (x / 31.0);
    const Grid2D a = clahe(g, 0.05, 4, 128);
    const Grid2D b = clahe(g, 0.05, 4, 128);
    CHECK(a.v == b.v);
    double max_dev = 0.0;
    for (std::size_t i = 0; i < a.v.size(); ++i)
        max_dev = std::max(max_dev, std::abs(a.v[i] - g.v[i]));
    CHECK(max_dev > 0.05);  // equalization stretched the contrast
}

namespace {

std::vector<CaseKey> make_cases(int n_patients, int cases_per_patient = 1) {
    std::vector<CaseKey> cases;
    for (int p = 0; p < n_patients; ++p) {
        for (int c = 0; c < cases_per_patient; ++c) {
            CaseKey k;
            char buf[32];
            std::snprintf(buf, sizeof(buf), "pat%03d", p);
            k.patient_key = buf;
            std::snprintf(buf, sizeof(buf), "pat%03d-case%d", p, c);
            k.case_id = buf;
            cases.push_back(k);
        }
    }
    return cases;
}

}  // namespace

TEST_CASE("split_patients: 10 patients at 0.8 gives an 8/2 patient split") {
    SplitSpec spec;
    spec.train_fraction = 0.8;
    spec.seed = 11;
    const PatientSplit s = split_patients(make_cases(10), spec);
    CHECK(s.train_patients.size() == 8);
    CHECK(s.val_patients.size() == 2);
    CHECK(s.train.size() == 8);
    CHECK(s.val.size() == 2);
    CHECK(std::is_sorted(s.train_patients.begin(), s.train_patients.end()));
    CHECK(std::is_sorted(s.val_patients.begin(), s.val_patients.end()));
}

TEST_CASE("split_patients keeps every patient on a single side") {
    SplitSpec spec;
    spec.train_fraction = 0.7;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        spec.seed = seed;
        const PatientSplit s = split_patients(make_cases(9, 3), spec);
        std::set<std::string> train_p(s.train_patients.begin(), s.train_patients.end());
        std::set<std::string> val_p(s.val_patients.begin(), s.val_patients.end());
        for (const auto& p : train_p) CHECK(val_p.count(p) == 0);
        for (const auto& c : s.train) CHECK(train_p.count(c.patient_key) == 1);
        for (const auto& c : s.val) CHECK(val_p.count(c.patient_key) == 1);
        CHECK(s.train.size() + s.val.size() == 27);
    }
}

TEST_CASE("split_patients is deterministic in the seed and sensitive to it") {
    SplitSpec spec;
    spec.train_fraction = 0.8;
    spec.seed = 42;
    const PatientSplit a = split_patients(make_cases(20), spec);
    const PatientSplit b = split_patients(make_cases(20), spec);
    CHECK(a.train_patients == b.train_patients);
    CHECK(a.val_patients == b.val_patients);

    spec.seed = 43;
    const PatientSplit c = split_patients(make_cases(20), spec);
    CHECK(a.train_patients != c.train_patients);  // 1-in-C(20,4) collision odds
}

TEST_CASE("split_patients clamps so both partitions stay nonempty") {
    SplitSpec spec;
    spec.seed = 5;
    spec.train_fraction = 0.99;
    const PatientSplit hi = split_patients(make_cases(3), spec);
    CHECK(hi.train_patients.size() == 2);
    CHECK(hi.val_patients.size() == 1);

    spec.train_fraction = 0.01;
    const PatientSplit lo = split_patients(make_cases(3), spec);
    CHECK(lo.train_patients.size() == 1);
    CHECK(lo.val_patients.size() == 2);

    CHECK_THROWS_AS(split_patients(make_cases(1), spec), DataError);
    CHECK_THROWS_AS(split_patients({}, spec), DataError);
}

TEST_CASE("extract_slices slices a volume in z order and round-trips stacking") {
    Volume v = uadtest::constant_volume(96, 96, 12, 0.0f);
    RandomStream rs(3);
    for (auto& x : v.voxels) x = static_cast<float>(rs.uniform());
    v.identifier = "caseX";

    const auto slices = extract_slices(v, 96);
    REQUIRE(slices.size() == 12);
    for (int z = 0; z < 12; ++z) {
        CHECK(slices[z].case_id == "caseX");
        CHECK(slices[z].slice_index == z);
        for (int y = 0; y < 96; ++y)
            for (int x = 0; x < 96; ++x)
                CHECK(static_cast<float>(slices[z].pixels.at(x, y)) == v.at(x, y, z));
    }

    const Volume odd = uadtest::constant_volume(100, 96, 4, 0.0f);
    CHECK_THROWS_AS(extract_slices(odd, 96), DataError);
}

TEST_CASE("hflip and vflip are involutions and move the expected pixel") {
    Grid2D g = uadtest::random_grid(9, 7, 21);
    const Grid2D h = hflip(g);
    CHECK(h.at(0, 3) == g.at(8, 3));
    CHECK(hflip(h).v == g.v);
    const Grid2D vv = vflip(g);
    CHECK(vv.at(4, 0) == g.at(4, 6));
    CHECK(vflip(vv).v == g.v);
}

TEST_CASE("augment with zero probabilities yields identical copies") {
    AugmentationPolicy pol;
    pol.p_hflip = pol.p_vflip = pol.p_clahe = 0.0;
    pol.copies_per_slice = 3;
    const Slice2D s = uadtest::random_slice(16, 5, "a", 0);
    RandomStream rs(9);
    const auto copies = augment(s, pol, rs);
    REQUIRE(copies.size() == 3);
    for (const auto& c : copies) {
        CHECK(c.pixels.v == s.pixels.v);
        CHECK(c.case_id == s.case_id);
    }
}

TEST_CASE("augment with p_hflip=1 flips every copy and keeps values in range") {
    AugmentationPolicy pol;
    pol.p_hflip = 1.0;
    pol.p_vflip = 0.0;
    pol.p_clahe = 0.0;
    pol.copies_per_slice = 2;
    const Slice2D s = uadtest::random_slice(16, 6, "b", 1);
    RandomStream rs(10);
    const auto copies = augment(s, pol, rs);
    REQUIRE(copies.size() == 2);
    const Grid2D expected = hflip(s.pixels);
    for (const auto& c : copies) CHECK(c.pixels.v == expected.v);
}

TEST_CASE("augment stays within [0,1] when CLAHE fires") {
    AugmentationPolicy pol;
    pol.p_hflip = 0.5;
    pol.p_vflip = 0.5;
    pol.p_clahe = 1.0;
    pol.copies_per_slice = 4;
    pol.clahe_tiles = 4;
    pol.clahe_bins = 64;
    const Slice2D s = uadtest::random_slice(32, 8, "c", 2);
    RandomStream rs(11);
    for (const auto& c : augment(s, pol, rs)) {
        for (double v : c.pixels.v) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("expand_training_set keeps originals first-class and is deterministic") {
    std::vector<Slice2D> slices;
    for (int i = 0; i < 5; ++i) slices.push_back(uadtest::random_slice(16, 100 + i, "case", i));
    AugmentationPolicy pol;
    pol.copies_per_slice = 3;
    pol.seed = 77;
    const auto a = expand_training_set(slices, pol);
    const auto b = expand_training_set(slices, pol);
    REQUIRE(a.size() == 5 * 4);  // originals + 3 copies each
    REQUIRE(b.size() == a.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].pixels.v == b[i].pixels.v);

    // All five originals appear verbatim.
    for (const auto& s : slices) {
        const bool found = std::any_of(a.begin(), a.end(), [&](const Slice2D& t) {
            return t.pixels.v == s.pixels.v && t.slice_index == s.slice_index;
        });
        CHECK(found);
    }
}

TEST_CASE("make_batches partitions slices into seeded shuffled batches") {
    std::vector<Slice2D> slices;
    for (int i = 0; i < 100; ++i) slices.push_back(uadtest::random_slice(8, 200 + i, "m", i));

    const auto batches = make_batches(slices, 32, 9001);
    REQUIRE(batches.size() == 4);
    CHECK(batches[0].size() == 32);
    CHECK(batches[1].size() == 32);
    CHECK(batches[2].size() == 32);
    CHECK(batches[3].size() == 4);

    // Conservation: every slice index appears exactly once.
    std::multiset<int> seen;
    for (const auto& b : batches)
        for (const auto& s : b) seen.insert(s.slice_index);
    CHECK(seen.size() == 100);
    for (int i = 0; i < 100; ++i) CHECK(seen.count(i) == 1);

    // Seed determinism and sensitivity.
    const auto again = make_batches(slices, 32, 9001);
    bool identical = true;
    for (std::size_t b = 0; b < batches.size() && identical; ++b)
        for (std::size_t i = 0; i < batches[b].size() && identical; ++i)
            identical = batches[b][i].slice_index == again[b][i].slice_index;
    CHECK(identical);

    const auto other = make_batches(slices, 32, 9002);
    bool differs = false;
    for (std::size_t i = 0; i < batches[0].size() && !differs; ++i)
        differs = batches[0][i].slice_index != other[0][i].slice_index;
    CHECK(differs);
}
