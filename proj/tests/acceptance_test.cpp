// End-to-end acceptance checks. Each numbered criterion prints one
// [PASS]/[FAIL] line; the process exits nonzero when any criterion fails.
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "uad/config.hpp"
#include "uad/dataset.hpp"
#include "uad/diffusion.hpp"
#include "uad/losses.hpp"
#include "uad/metrics.hpp"
#include "uad/phantom.hpp"
#include "uad/pipeline.hpp"
#include "uad/postprocess.hpp"
#include "uad/rng.hpp"
#include "uad/ssim.hpp"

using namespace uad;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

fs::path g_scratch;

// Shared artifacts from the end-to-end criterion, reused by the determinism
// and latency criteria.
std::optional<RunConfig> g_disc_cfg;

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(9);
    os << v;
    return os.str();
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// --------------------------------------------------------------- criteria --

// 1. roc_auc against the brute-force pairwise rank statistic, with ties.
Outcome metric_oracle_equivalence() {
    RandomStream rs(8001);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 10 + static_cast<int>(rs.uniform(0.0, 490.0));
        std::vector<double> scores(n);
        std::vector<std::uint8_t> labels(n);
        const int levels = trial % 2 == 0 ? 8 : 1000;  // coarse levels force ties
        for (int i = 0; i < n; ++i) {
            scores[i] = std::floor(rs.uniform(0.0, 1.0) * levels) / levels;
            labels[i] = rs.uniform(0.0, 1.0) < 0.35 ? 1 : 0;
        }
        labels[0] = 0;
        labels[1] = 1;

        long double pairs = 0.0L, credit = 0.0L;
        for (int i = 0; i < n; ++i) {
            if (!labels[i]) continue;
            for (int j = 0; j < n; ++j) {
                if (labels[j]) continue;
                pairs += 1.0L;
                if (scores[i] > scores[j]) credit += 1.0L;
                else if (scores[i] == scores[j]) credit += 0.5L;
            }
        }
        const double oracle = static_cast<double>(credit / pairs);
        const double got = roc_auc(scores, labels).auc;
        worst = std::max(worst, std::abs(got - oracle));
    }
    if (worst > 1e-9) return {false, "max |auc - oracle| = " + fmt(worst)};
    return {true, "200 instances, max deviation " + fmt(worst)};
}

// 2. Analytic gradients vs central finite differences on 8x8 inputs.
Outcome gradient_correctness() {
    const int n = 8;
    RandomStream rs(8002);
    Grid2D x(n, n), y(n, n);
    for (double& v : x.v) v = rs.uniform(0.2, 0.8);
    for (double& v : y.v) v = rs.uniform(0.2, 0.8);
    SsimConfig scfg;
    scfg.window = 5;  // the 8x8 probe cannot host the default 11-pixel window
    auto identity = make_extractor("identity", 0);

    const double h = 1e-5;
    double worst = 0.0;
    int checked = 0;
    std::string fail;

    auto check = [&](const char* name, const std::function<double(const Grid2D&)>& f,
                     const Grid2D& grad) {
        for (int idx : {0, 9, 27, 36, 50, 63}) {
            Grid2D yp = y, ym = y;
            yp.v[idx] += h;
            ym.v[idx] -= h;
            const double fd = (f(yp) - f(ym)) / (2 * h);
            const double an = grad.v[idx];
            if (std::max(std::abs(fd), std::abs(an)) < 1e-4) continue;  // no signal
            const double rel = std::abs(fd - an) / std::max(std::abs(fd), std::abs(an));
            worst = std::max(worst, rel);
            ++checked;
            if (rel > 1e-3 && fail.empty()) {
                fail = std::string(name) + "[" + std::to_string(idx) + "] rel " + fmt(rel);
            }
        }
    };

    Grid2D g_mse(n, n);
    mse(x, y, &g_mse);
    check("mse", [&](const Grid2D& yy) { return mse(x, yy); }, g_mse);

    Grid2D g_ssim(n, n);
    ssim_loss(x, y, scfg, &g_ssim);
    check("ssim_loss", [&](const Grid2D& yy) { return ssim_loss(x, yy, scfg); }, g_ssim);

    Grid2D g_perc(n, n);
    perceptual_loss(x, y, *identity, {0.3, 0.15}, &g_perc);
    check("perceptual",
          [&](const Grid2D& yy) { return perceptual_loss(x, yy, *identity, {0.3, 0.15}); },
          g_perc);

    // KL in the (mu, logvar) parameterization.
    std::vector<double> mu(6), logvar(6), dmu, dlogvar;
    for (double& v : mu) v = rs.uniform(-1.0, 1.0);
    for (double& v : logvar) v = rs.uniform(-1.0, 1.0);
    kl_from_mu_logvar(mu, logvar, &dmu, &dlogvar);
    for (std::size_t i = 0; i < mu.size(); ++i) {
        auto fd_of = [&](std::vector<double> m, std::vector<double> lv) {
            return kl_from_mu_logvar(m, lv);
        };
        std::vector<double> mp = mu, mm = mu, lp = logvar, lm = logvar;
        mp[i] += h;
        mm[i] -= h;
        lp[i] += h;
        lm[i] -= h;
        const double fd_m = (fd_of(mp, logvar) - fd_of(mm, logvar)) / (2 * h);
        const double fd_l = (fd_of(mu, lp) - fd_of(mu, lm)) / (2 * h);
        for (auto [fd, an] : {std::pair{fd_m, dmu[i]}, std::pair{fd_l, dlogvar[i]}}) {
            if (std::max(std::abs(fd), std::abs(an)) < 1e-4) continue;
            const double rel = std::abs(fd - an) / std::max(std::abs(fd), std::abs(an));
            worst = std::max(worst, rel);
            ++checked;
            if (rel > 1e-3 && fail.empty()) fail = "kl[" + std::to_string(i) + "] rel " + fmt(rel);
        }
    }

    if (!fail.empty()) return {false, fail};
    if (checked < 16) return {false, "only " + std::to_string(checked) + " informative probes"};
    return {true, std::to_string(checked) + " probes, worst rel err " + fmt(worst)};
}

// 3. Composite loss: exact zero at the fixed point, recoverable coefficients.
Outcome loss_composition() {
    RandomStream rs(8003);
    Grid2D x(32, 32);
    for (double& v : x.v) v = rs.uniform(0.1, 0.9);
    LossWeights w;
    SsimConfig scfg;
    auto identity = make_extractor("identity", 0);

    LatentDistribution d;
    d.mu.assign(16, 0.0);
    d.sigma.assign(16, 1.0);
    const LossBreakdown zero = total_loss(x, x, d, 0, w, scfg, *identity);
    if (zero.total != 0.0) return {false, "fixed-point total = " + fmt(zero.total)};

    Grid2D recon(32, 32);
    for (double& v : recon.v) v = rs.uniform(0.1, 0.9);
    LatentDistribution d2;
    for (int i = 0; i < 16; ++i) {
        d2.mu.push_back(rs.uniform(-1.0, 1.0));
        d2.sigma.push_back(rs.uniform(0.5, 1.5));
    }
    const int epoch = 37;
    const LossBreakdown bd = total_loss(x, recon, d2, epoch, w, scfg, *identity);
    const double recomposed =
        bd.w_mse * bd.mse + bd.w_ssim * bd.ssim + bd.beta * bd.kl + bd.w_perc * bd.perceptual;
    if (std::abs(bd.total - recomposed) > 1e-15)
        return {false, "total " + fmt(bd.total) + " != recomposed " + fmt(recomposed)};
    if (bd.w_mse != 1.0 || bd.w_ssim != 0.5 || bd.w_perc != 0.3)
        return {false, "weights (" + fmt(bd.w_mse) + ", " + fmt(bd.w_ssim) + ", " +
                           fmt(bd.w_perc) + ")"};
    if (bd.beta != beta_schedule(epoch, w))
        return {false, "breakdown beta " + fmt(bd.beta) + " != schedule"};
    return {true, "coefficients (1, 0.5, beta(epoch), 0.3), fixed point exact"};
}

// 4. KL annealing endpoints and linearity.
Outcome beta_endpoints() {
    LossWeights w;
    if (beta_schedule(0, w) != 1e-5) return {false, "beta(0) = " + fmt(beta_schedule(0, w))};
    if (beta_schedule(100, w) != 1e-4) return {false, "beta(100) = " + fmt(beta_schedule(100, w))};
    if (beta_schedule(150, w) != 1e-4) return {false, "beta(150) = " + fmt(beta_schedule(150, w))};
    const double mid = beta_schedule(50, w);
    if (std::abs(mid - 5.5e-5) > 1e-16) return {false, "beta(50) = " + fmt(mid)};
    return {true, "beta(0)=1e-5, beta(50)=5.5e-5, beta(100)=1e-4"};
}

// 5. Radial weighting values and percentile-gate fraction.
Outcome postprocess_formulas() {
    PostprocessConfig cfg;  // percentile 20, radius 30
    const Grid2D m = radial_mask(61, 61, cfg);
    if (m.at(30, 30) != 1.0) return {false, "center weight " + fmt(m.at(30, 30))};
    const double want = std::exp(-0.5);
    for (auto [x, y] : {std::pair{0, 30}, std::pair{60, 30}, std::pair{30, 0}, std::pair{30, 60}}) {
        if (std::abs(m.at(x, y) - want) > 1e-12)
            return {false, "weight at d=30 is " + fmt(m.at(x, y))};
    }

    double lo = 1.0, hi = 0.0;
    for (int seed = 0; seed < 50; ++seed) {
        RandomStream rs(9000 + seed);
        AnomalyMap am;
        am.values = Grid2D(100, 80);
        am.case_id = "p";
        for (double& v : am.values.v) v = rs.uniform(0.01, 1.0);
        const AnomalyMap gated = percentile_threshold(am, 20.0);
        int zeros = 0;
        for (double v : gated.values.v) zeros += v == 0.0;
        const double frac = static_cast<double>(zeros) / gated.values.v.size();
        lo = std::min(lo, frac);
        hi = std::max(hi, frac);
        if (frac < 0.18 || frac > 0.22)
            return {false, "seed " + std::to_string(seed) + " zeroed " + fmt(frac)};
    }
    return {true, "center=1, edge=exp(-0.5); gate zeroed [" + fmt(lo) + ", " + fmt(hi) + "]"};
}

RunConfig e2e_config(const std::string& lesion, const fs::path& data_dir,
                     const fs::path& out_dir) {
    nlohmann::json j = {
        {"seed", 20260814},
        {"paths", {{"data_dir", data_dir.string()}, {"out_dir", out_dir.string()}}},
        {"preprocess",
         {{"target_spacing", {0.5, 0.5, 1.0}},
          {"working_shape", {96, 96, 8}},
          {"crop_size", 96}}},
        {"resvae", {{"channels", {4, 8, 16, 32}}, {"latent_dim", 32}}},
        {"train",
         {{"epochs", 10}, {"batch_size", 32}, {"patience", 15}, {"learning_rate", 3e-4}}},
        {"augmentation", {{"copies_per_slice", 0}}},
        {"phantom", {{"n_train", 64}, {"n_eval", 16}, {"lesion", lesion}}},
        {"use_synthetic_slices", false},
    };
    return run_config_from_json(j);
}

std::map<std::string, double> read_pathology_aucs(const fs::path& metrics_tsv) {
    std::ifstream in(metrics_tsv);
    std::map<std::string, double> aucs;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#' || line.rfind("stratum_kind", 0) == 0) continue;
        std::istringstream row(line);
        std::vector<std::string> cells;
        std::string cell;
        while (std::getline(row, cell, '\t')) cells.push_back(cell);
        if (cells.size() < 9 || cells[0] != "pathology") continue;
        aucs[cells[1]] = std::stod(cells[7]);
    }
    return aucs;
}

// 6. Phantom-scale end-to-end: focal lesions must score high and beat diffuse.
Outcome phantom_end_to_end() {
    double disc_auc = -1.0, diffuse_auc = -1.0;
    for (const std::string lesion : {"disc", "diffuse"}) {
        const fs::path data = g_scratch / ("data-" + lesion);
        const fs::path out = g_scratch / ("out-" + lesion);
        const RunConfig cfg = e2e_config(lesion, data, out);
        generate_phantom_data(cfg);
        run_pipeline(cfg, {Stage::Preprocess, Stage::Train, Stage::Infer, Stage::Evaluate});
        const auto aucs = read_pathology_aucs(out / "evaluate" / "metrics.tsv");
        const auto it = aucs.find("lesion_" + lesion);
        if (it == aucs.end()) return {false, "no pathology row for lesion_" + lesion};
        (lesion == "disc" ? disc_auc : diffuse_auc) = it->second;
        if (lesion == "disc") g_disc_cfg = cfg;
    }
    const std::string detail =
        "disc auc " + fmt(disc_auc) + ", diffuse auc " + fmt(diffuse_auc);
    if (disc_auc < 0.90) return {false, detail + " (disc below 0.90)"};
    if (disc_auc <= diffuse_auc) return {false, detail + " (no focal-vs-diffuse gap)"};
    return {true, detail};
}

// 7. Memorization gate on the synthetic-sample filter.
Outcome memorization_gate() {
    const auto corpus = make_phantom_corpus(2, 8007, "none");
    std::vector<Slice2D> real;
    for (const AnnotatedCase& c : corpus) {
        const auto s = extract_slices(c.volume, 96);
        real.insert(real.end(), s.begin(), s.end());
    }

    Slice2D copy = real[2];
    copy.case_id = "synth-copy";
    RandomStream rs(8077);
    Slice2D noise(Grid2D(96, 96), "synth-noise", 0);
    for (double& v : noise.pixels.v) v = rs.uniform(0.0, 1.0);

    const FilterResult fr = memorization_filter({copy, noise}, real, 0.35, SsimConfig{});
    if (fr.kept.size() + fr.rejected.size() != 2)
        return {false, "kept+rejected != sample count"};
    if (fr.rejected.size() != 1 || fr.rejected[0].case_id != "synth-copy")
        return {false, "verbatim copy was not rejected"};
    if (fr.kept.size() != 1 || fr.kept[0].case_id != "synth-noise")
        return {false, "independent sample was not kept"};
    double copy_ssim = 0.0, noise_ssim = 0.0;
    for (const FilterRecord& r : fr.report) {
        if (r.sample_id == "synth-copy") copy_ssim = r.max_ssim;
        if (r.sample_id == "synth-noise") noise_ssim = r.max_ssim;
    }
    if (!(copy_ssim > 0.999)) return {false, "copy max ssim " + fmt(copy_ssim)};
    if (!(noise_ssim <= 0.35)) return {false, "noise max ssim " + fmt(noise_ssim)};
    return {true, "copy ssim " + fmt(copy_ssim) + " rejected, noise ssim " +
                      fmt(noise_ssim) + " kept"};
}

// 8. Byte-identical rerun of infer + evaluate.
Outcome determinism() {
    if (!g_disc_cfg) return {false, "end-to-end artifacts unavailable"};
    const fs::path out = g_disc_cfg->paths.out_dir;

    std::map<std::string, std::string> before;
    before["metrics.tsv"] = read_file(out / "evaluate" / "metrics.tsv");
    before["volumes.tsv"] = read_file(out / "evaluate" / "volumes.tsv");
    for (const auto& e : fs::directory_iterator(out / "evaluate" / "roc")) {
        before["roc/" + e.path().filename().string()] = read_file(e.path());
    }

    fs::remove_all(out / "infer");
    fs::remove_all(out / "evaluate");
    run_pipeline(*g_disc_cfg, {Stage::Infer, Stage::Evaluate});

    for (const auto& [rel, bytes] : before) {
        const std::string again = read_file(out / "evaluate" / rel);
        if (again.empty()) return {false, rel + " missing after rerun"};
        if (again != bytes) return {false, rel + " differs across reruns"};
    }
    return {true, std::to_string(before.size()) + " metric tables byte-identical"};
}

// 9. Latency benchmark consistency; the reference point is reported only.
Outcome latency_report() {
    if (!g_disc_cfg) return {false, "end-to-end artifacts unavailable"};
    run_pipeline(*g_disc_cfg, {Stage::Bench});
    const fs::path out = g_disc_cfg->paths.out_dir;
    std::ifstream in(out / "bench" / "latency.json");
    const nlohmann::json j = nlohmann::json::parse(in);
    const double ms = j.at("ms_per_slice").get<double>();
    const double fps = j.at("fps").get<double>();
    const double spv = j.at("s_per_volume").get<double>();
    std::cout << "        reference point (reported, not asserted on this hardware): "
              << j.at("reference").at("ms_per_slice").get<double>() << " ms/slice = "
              << j.at("reference").at("fps").get<double>() << " FPS = "
              << j.at("reference").at("s_per_volume").get<double>() << " s/volume\n";
    if (!(ms > 0.0) || !(fps > 0.0) || !(spv > 0.0))
        return {false, "non-positive timing values"};
    if (std::abs(fps * ms - 1000.0) > 10.0)
        return {false, "FPS x ms = " + fmt(fps * ms)};
    if (std::abs(spv - 30.0 * ms / 1000.0) > 0.01 * spv)
        return {false, "s/volume inconsistent with ms/slice"};
    return {true, fmt(ms) + " ms/slice, " + fmt(fps) + " FPS, " + fmt(spv) + " s/volume"};
}

// 10. Volumetry arithmetic.
Outcome volumetry() {
    SegmentationMask m({40, 40, 5}, {{1, "uterus"}, {2, "lesion"}});
    for (std::int32_t& v : m.labels) v = 2;  // 40*40*5 = 8000 voxels
    const double ml = lesion_volume(m, 2, {0.5, 0.5, 1.0});
    if (std::abs(ml - 2.0) > 1e-9) return {false, "8000 voxels -> " + fmt(ml) + " mL"};
    return {true, "8000 voxels at (0.5, 0.5, 1) mm -> " + fmt(ml) + " mL"};
}

}  // namespace

int main() {
    g_scratch = fs::temp_directory_path() / "uad-acceptance";
    fs::remove_all(g_scratch);
    fs::create_directories(g_scratch);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"metric-oracle equivalence (pairwise rank statistic)", metric_oracle_equivalence},
        {"gradient correctness (central finite differences)", gradient_correctness},
        {"loss composition (fixed point and coefficients)", loss_composition},
        {"KL annealing schedule endpoints", beta_endpoints},
        {"post-processing formulas (radial weights, percentile gate)", postprocess_formulas},
        {"phantom end-to-end (focal AUC >= 0.90, above diffuse)", phantom_end_to_end},
        {"memorization gate on synthetic samples", memorization_gate},
        {"byte-identical infer + evaluate rerun", determinism},
        {"latency report (FPS x ms = 1000 +- 1%)", latency_report},
        {"volumetry (8000 voxels -> 2.000 mL)", volumetry},
    };

    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome oc;
        try {
            oc = criteria[i].second();
        } catch (const std::exception& e) {
            oc = {false, std::string("exception: ") + e.what()};
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cout << (oc.pass ? "[PASS] " : "[FAIL] ") << (i + 1) << ". " << criteria[i].first
                  << " — " << oc.detail << "  (" << fmt(secs) << " s)" << std::endl;
        failures += oc.pass ? 0 : 1;
    }

    std::error_code ec;
    fs::remove_all(g_scratch, ec);
    if (failures > 0) {
        std::cout << failures << " criterion(s) failed" << std::endl;
        return 1;
    }
    std::cout << "all 10 criteria passed" << std::endl;
    return 0;
}
