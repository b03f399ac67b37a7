#include "uad/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <set>

#include "uad/bench.hpp"
#include "uad/case.hpp"
#include "uad/errors.hpp"
#include "uad/hash.hpp"
#include "uad/ioutil.hpp"
#include "uad/nifti.hpp"
#include "uad/phantom.hpp"
#include "uad/rng.hpp"
#include "uad/version.hpp"

namespace uad {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(Stage s) {
    switch (s) {
        case Stage::Preprocess: return "preprocess";
        case Stage::Synth: return "synth";
        case Stage::Train: return "train";
        case Stage::Infer: return "infer";
        case Stage::Evaluate: return "evaluate";
        case Stage::Bench: return "bench";
    }
    return "?";
}

Stage stage_from_string(const std::string& s) {
    if (s == "preprocess") return Stage::Preprocess;
    if (s == "synth") return Stage::Synth;
    if (s == "train") return Stage::Train;
    if (s == "infer") return Stage::Infer;
    if (s == "evaluate") return Stage::Evaluate;
    if (s == "bench") return Stage::Bench;
    throw ValidationError("unknown stage '" + s + "'");
}

namespace {

void log_line(std::ostream* log, const std::string& line) {
    if (log) *log << line << "\n";
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

std::string rel_to(const fs::path& root, const fs::path& p) {
    return fs::relative(p, root).generic_string();
}

// ---------------------------------------------------------------------------
// Stage state: {config_hash, inputs: path->hash, outputs: rel->hash}. A stage
// is up to date when all three match the filesystem.

std::map<std::string, std::string> hash_files(const std::vector<fs::path>& files) {
    std::map<std::string, std::string> out;
    for (const fs::path& f : files) out[f.generic_string()] = hash_file(f.string());
    return out;
}

bool stage_up_to_date(const fs::path& state_path, const std::string& cfg_hash,
                      const std::map<std::string, std::string>& inputs,
                      const fs::path& out_root) {
    if (!fs::exists(state_path)) return false;
    json st;
    try {
        st = read_json_file(state_path.string());
    } catch (const Error&) {
        return false;
    }
    if (!st.is_object() || st.value("config_hash", "") != cfg_hash) return false;
    json in = st.value("inputs", json::object());
    if (in.size() != inputs.size()) return false;
    for (const auto& [path, h] : inputs) {
        if (in.value(path, "") != h) return false;
    }
    const json outs = st.value("outputs", json::object());
    for (const auto& [rel, h] : outs.items()) {
        const fs::path p = out_root / rel;
        if (!fs::exists(p)) return false;
        if (hash_file(p.string()) != h.get<std::string>()) return false;
    }
    return true;
}

void write_stage_state(const fs::path& state_path, const std::string& cfg_hash,
                       const std::map<std::string, std::string>& inputs,
                       const std::vector<fs::path>& outputs, const fs::path& out_root) {
    json st;
    st["config_hash"] = cfg_hash;
    st["inputs"] = inputs;
    json outs = json::object();
    for (const fs::path& p : outputs) outs[rel_to(out_root, p)] = hash_file(p.string());
    st["outputs"] = outs;
    write_json_file(state_path.string(), st);
}

// ---------------------------------------------------------------------------
// Source corpus discovery: data_dir/{train,eval}/<case>/volume.nii[.gz]

struct CasePaths {
    std::string case_id;
    std::string group;  // train | eval
    fs::path volume;
    std::map<std::string, fs::path> masks;  // annotator -> file
    fs::path metadata;
    fs::path labels;
};

std::vector<CasePaths> discover_cases(const std::string& data_dir) {
    std::vector<CasePaths> out;
    if (!fs::is_directory(data_dir)) return out;
    std::vector<std::string> groups;
    for (const auto& e : fs::directory_iterator(data_dir)) {
        if (e.is_directory()) groups.push_back(e.path().filename().string());
    }
    std::sort(groups.begin(), groups.end());
    for (const std::string& g : groups) {
        if (g != "train" && g != "eval") {
            throw DataError("unexpected corpus group '" + g + "' under '" + data_dir +
                            "'; expected only train/ and eval/");
        }
        std::vector<fs::path> case_dirs;
        for (const auto& e : fs::directory_iterator(fs::path(data_dir) / g)) {
            if (e.is_directory()) case_dirs.push_back(e.path());
        }
        std::sort(case_dirs.begin(), case_dirs.end());
        for (const fs::path& dir : case_dirs) {
            CasePaths cp;
            cp.case_id = dir.filename().string();
            cp.group = g;
            for (const char* name : {"volume.nii.gz", "volume.nii"}) {
                if (fs::exists(dir / name)) cp.volume = dir / name;
            }
            if (cp.volume.empty()) continue;
            std::vector<fs::path> files;
            for (const auto& e : fs::directory_iterator(dir)) files.push_back(e.path());
            std::sort(files.begin(), files.end());
            for (const fs::path& f : files) {
                const std::string n = f.filename().string();
                if (n.rfind("mask_", 0) == 0) {
                    std::string annot = n.substr(5);
                    const auto dot = annot.find(".nii");
                    if (dot == std::string::npos) continue;
                    annot = annot.substr(0, dot);
                    cp.masks[annot] = f;
                }
            }
            cp.metadata = dir / "metadata.json";
            cp.labels = dir / "labels.json";
            if (!fs::exists(cp.metadata)) {
                throw DataError("case '" + cp.case_id + "' is missing metadata.json");
            }
            if (!fs::exists(cp.labels)) {
                throw DataError("case '" + cp.case_id + "' is missing labels.json");
            }
            if (cp.masks.empty()) {
                throw DataError("case '" + cp.case_id + "' has no mask_<annotator>.nii files");
            }
            out.push_back(std::move(cp));
        }
    }
    return out;
}

std::map<std::int32_t, std::string> load_label_names(const fs::path& path) {
    std::map<std::int32_t, std::string> names;
    const json j = read_json_file(path.string());
    for (const auto& [key, val] : j.items()) {
        names[static_cast<std::int32_t>(std::stol(key))] = val.get<std::string>();
    }
    return names;
}

json manifest_dependency(const fs::path& path, const char* stage, const char* producer) {
    if (!fs::exists(path)) {
        throw DataError(std::string("stage '") + stage + "' requires the manifest '" +
                        path.string() + "'; run the " + producer + " stage first");
    }
    return read_json_file(path.string());
}

std::vector<Slice2D> case_slices(const fs::path& volume_path, int crop,
                                 const std::string& id = "") {
    Volume v = load_volume(volume_path.string());
    if (!id.empty()) v.identifier = id;  // file stems are generic ("volume")
    return extract_slices(v, crop);
}

// ---------------------------------------------------------------------------

StageOutcome run_stage_preprocess(const RunConfig& cfg, const std::string& cfg_hash,
                                  std::ostream* log) {
    StageOutcome oc{Stage::Preprocess};
    const fs::path out_root = cfg.paths.out_dir;
    const fs::path stage_dir = out_root / "preprocess";
    const fs::path state_path = stage_dir / "state.json";

    std::vector<CasePaths> cases = discover_cases(cfg.paths.data_dir);
    if (cases.empty()) {
        throw DataError("no input cases found under '" + cfg.paths.data_dir +
                        "'; expected <data_dir>/{train,eval}/<case>/volume.nii.gz (generate "
                        "one with `uad phantom`)");
    }
    std::vector<fs::path> input_files;
    for (const CasePaths& cp : cases) {
        input_files.push_back(cp.volume);
        for (const auto& [a, p] : cp.masks) input_files.push_back(p);
        input_files.push_back(cp.metadata);
        input_files.push_back(cp.labels);
    }
    const auto inputs = hash_files(input_files);
    if (stage_up_to_date(state_path, cfg_hash, inputs, out_root)) {
        oc.skipped = true;
        oc.message = "outputs up to date";
        log_line(log, "[preprocess] up to date, skipping");
        return oc;
    }

    ensure_directory(stage_dir.string());
    json manifest;
    manifest["config_hash"] = cfg_hash;
    manifest["code_version"] = kCodeVersion;
    manifest["crop_size"] = cfg.preprocess.crop_size;
    manifest["target_spacing"] = cfg.preprocess.target_spacing;
    json mcases = json::array();
    std::vector<fs::path> outputs;

    for (const CasePaths& cp : cases) {
        const Volume v = load_volume(cp.volume.string());
        const auto names = load_label_names(cp.labels);
        const CaseMetadata meta = load_case_metadata(cp.metadata.string());

        // The reference annotator's mask anchors the connected-component
        // cleanup and the crop box; remaining annotators follow it.
        std::vector<SegmentationMask> masks;
        if (auto it = cp.masks.find(cfg.evaluate.reference_annotator); it != cp.masks.end()) {
            masks.push_back(load_mask(it->second.string(), names, it->first));
        }
        for (const auto& [annot, path] : cp.masks) {
            if (annot == cfg.evaluate.reference_annotator && !masks.empty()) continue;
            masks.push_back(load_mask(path.string(), names, annot));
        }

        const PreprocessedCase pc = preprocess_case(v, masks, cfg.preprocess);

        const fs::path case_dir = stage_dir / "cases" / cp.group / cp.case_id;
        ensure_directory(case_dir.string());
        const fs::path vol_path = case_dir / "volume.nii.gz";
        save_volume(pc.volume, vol_path.string());
        outputs.push_back(vol_path);
        json mask_files = json::object();
        for (const SegmentationMask& m : pc.masks) {
            const fs::path mp = case_dir / ("mask_" + m.annotator + ".nii.gz");
            save_mask(m, mp.string(), pc.volume.spacing);
            outputs.push_back(mp);
            mask_files[m.annotator] = rel_to(out_root, mp);
        }
        json names_json = json::object();
        for (const auto& [id, name] : names) names_json[std::to_string(id)] = name;
        const fs::path labels_path = case_dir / "labels.json";
        write_json_file(labels_path.string(), names_json);
        outputs.push_back(labels_path);
        const fs::path meta_path = case_dir / "metadata.json";
        save_case_metadata(meta, meta_path.string());
        outputs.push_back(meta_path);
        const json box = {{"x0", pc.box.x0},     {"y0", pc.box.y0},
                          {"width", pc.box.width}, {"height", pc.box.height},
                          {"z_lo", pc.box.z_lo}, {"z_hi", pc.box.z_hi},
                          {"truncated", pc.box.truncated}};
        const fs::path box_path = case_dir / "bbox.json";
        write_json_file(box_path.string(),
                        {{"box", box}, {"absent_uterus_labels", pc.absent_uterus_labels}});
        outputs.push_back(box_path);

        mcases.push_back({{"case_id", cp.case_id},
                          {"group", cp.group},
                          {"patient_key", meta.patient_key},
                          {"volume", rel_to(out_root, vol_path)},
                          {"masks", mask_files},
                          {"labels", rel_to(out_root, labels_path)},
                          {"metadata", rel_to(out_root, meta_path)},
                          {"bbox", rel_to(out_root, box_path)},
                          {"truncated", pc.box.truncated}});
        log_line(log, "[preprocess] " + cp.group + "/" + cp.case_id + " -> " +
                          rel_to(out_root, vol_path));
    }
    manifest["cases"] = mcases;
    const fs::path manifest_path = stage_dir / "manifest.json";
    write_json_file(manifest_path.string(), manifest);
    outputs.push_back(manifest_path);
    write_stage_state(state_path, cfg_hash, inputs, outputs, out_root);
    oc.message = std::to_string(mcases.size()) + " cases preprocessed";
    return oc;
}

std::vector<json> manifest_cases(const json& manifest, const std::string& group) {
    std::vector<json> out;
    for (const json& c : manifest.at("cases")) {
        if (group.empty() || c.at("group").get<std::string>() == group) out.push_back(c);
    }
    return out;
}

std::vector<Slice2D> load_train_slices(const json& pre, const fs::path& out_root, int crop) {
    std::vector<Slice2D> real;
    for (const json& c : manifest_cases(pre, "train")) {
        const auto slices = case_slices(out_root / c.at("volume").get<std::string>(), crop,
                                        c.at("case_id").get<std::string>());
        real.insert(real.end(), slices.begin(), slices.end());
    }
    return real;
}

Volume slice_to_volume(const Slice2D& s, Spacing spacing) {
    Volume v;
    v.shape = {s.pixels.w, s.pixels.h, 1};
    v.spacing = spacing;
    v.identifier = s.case_id;
    v.voxels.resize(s.pixels.size());
    for (std::size_t i = 0; i < v.voxels.size(); ++i) {
        v.voxels[i] = static_cast<float>(s.pixels.v[i]);
    }
    return v;
}

StageOutcome synth_train_step(const RunConfig& cfg, const std::string& cfg_hash,
                              std::ostream* log) {
    StageOutcome oc{Stage::Synth};
    const fs::path out_root = cfg.paths.out_dir;
    const fs::path stage_dir = out_root / "synth";
    const fs::path state_path = stage_dir / "train_state.json";
    const fs::path pre_manifest_path = out_root / "preprocess" / "manifest.json";
    const json pre = manifest_dependency(pre_manifest_path, "synth-train", "preprocess");

    const auto inputs = hash_files({pre_manifest_path});
    if (stage_up_to_date(state_path, cfg_hash, inputs, out_root)) {
        oc.skipped = true;
        oc.message = "synth-train outputs up to date";
        log_line(log, "[synth-train] up to date, skipping");
        return oc;
    }

    const std::vector<Slice2D> real =
        load_train_slices(pre, out_root, cfg.preprocess.crop_size);
    if (real.empty()) throw DataError("synth-train found no training slices");

    ensure_directory(stage_dir.string());
    DdpmTrainConfig dt;
    dt.arch = cfg.synth.arch;
    dt.steps = cfg.synth.steps;
    dt.batch_size = cfg.synth.batch_size;
    dt.val_batch = cfg.synth.val_batch;
    dt.learning_rate = cfg.synth.learning_rate;
    dt.weight_decay = cfg.synth.weight_decay;
    dt.seed = fanout_seed(cfg.seed, "synth-train");

    std::ofstream hist((stage_dir / "ddpm_history.jsonl").string(), std::ios::binary);
    DdpmTrainResult tr = ddpm_train(real, cfg.synth.schedule(), dt, &hist);
    hist.close();
    log_line(log, "[synth-train] noise-prediction loss " + fmt(tr.initial_val_loss) + " -> " +
                      fmt(tr.final_val_loss));

    CheckpointPayload ckpt = tr.model.to_checkpoint(cfg_hash);
    ckpt.code_version = kCodeVersion;
    const std::string ckpt_id = checkpoint_digest(ckpt);
    const fs::path ckpt_path = stage_dir / "ddpm.ckpt";
    write_checkpoint(ckpt, ckpt_path.string());

    json manifest;
    manifest["config_hash"] = cfg_hash;
    manifest["code_version"] = kCodeVersion;
    manifest["checkpoint"] = rel_to(out_root, ckpt_path);
    manifest["checkpoint_id"] = ckpt_id;
    manifest["initial_val_loss"] = tr.initial_val_loss;
    manifest["final_val_loss"] = tr.final_val_loss;
    manifest["n_real_slices"] = real.size();
    const fs::path manifest_path = stage_dir / "train_manifest.json";
    write_json_file(manifest_path.string(), manifest);

    write_stage_state(state_path, cfg_hash, inputs,
                      {ckpt_path, manifest_path, stage_dir / "ddpm_history.jsonl"}, out_root);
    oc.message = "noise-prediction loss " + fmt(tr.initial_val_loss) + " -> " +
                 fmt(tr.final_val_loss);
    return oc;
}

StageOutcome synth_sample_step(const RunConfig& cfg, const std::string& cfg_hash,
                               std::ostream* log) {
    StageOutcome oc{Stage::Synth};
    const fs::path out_root = cfg.paths.out_dir;
    const fs::path stage_dir = out_root / "synth";
    const fs::path state_path = stage_dir / "sample_state.json";
    const fs::path train_manifest_path = stage_dir / "train_manifest.json";
    const json tm = manifest_dependency(train_manifest_path, "synth-sample", "synth-train");
    const fs::path ckpt_path = out_root / tm.at("checkpoint").get<std::string>();
    if (!fs::exists(ckpt_path)) {
        throw DataError("stage 'synth-sample' requires the checkpoint '" + ckpt_path.string() +
                        "'; run the synth-train stage first");
    }

    const auto inputs = hash_files({train_manifest_path, ckpt_path});
    if (stage_up_to_date(state_path, cfg_hash, inputs, out_root)) {
        oc.skipped = true;
        oc.message = "synth-sample outputs up to date";
        log_line(log, "[synth-sample] up to date, skipping");
        return oc;
    }

    DdpmUNet model = DdpmUNet::from_checkpoint(read_checkpoint(ckpt_path.string()));
    if (!(model.config() == cfg.synth.arch)) {
        throw DataError("diffusion checkpoint architecture does not match the current config");
    }

    const std::vector<Slice2D> samples = ddpm_sample(
        model, cfg.synth.schedule(), cfg.synth.n_samples, fanout_seed(cfg.seed, "synth-sample"));

    ensure_directory((stage_dir / "samples_raw").string());
    json listed = json::array();
    std::vector<fs::path> outputs;
    for (const Slice2D& s : samples) {
        const fs::path sp = stage_dir / "samples_raw" / (s.case_id + ".nii.gz");
        save_volume(slice_to_volume(s, cfg.preprocess.target_spacing), sp.string());
        outputs.push_back(sp);
        listed.push_back({{"id", s.case_id}, {"file", rel_to(out_root, sp)}});
    }

    json manifest;
    manifest["config_hash"] = cfg_hash;
    manifest["code_version"] = kCodeVersion;
    manifest["checkpoint_id"] = tm.at("checkpoint_id").get<std::string>();
    manifest["samples"] = listed;
    const fs::path manifest_path = stage_dir / "sample_manifest.json";
    write_json_file(manifest_path.string(), manifest);
    outputs.push_back(manifest_path);
    write_stage_state(state_path, cfg_hash, inputs, outputs, out_root);
    oc.message = std::to_string(samples.size()) + " samples drawn";
    log_line(log, "[synth-sample] " + oc.message);
    return oc;
}

StageOutcome synth_filter_step(const RunConfig& cfg, const std::string& cfg_hash,
                               std::ostream* log) {
    StageOutcome oc{Stage::Synth};
    const fs::path out_root = cfg.paths.out_dir;
    const fs::path stage_dir = out_root / "synth";
    const fs::path state_path = stage_dir / "filter_state.json";
    const fs::path pre_manifest_path = out_root / "preprocess" / "manifest.json";
    const fs::path sample_manifest_path = stage_dir / "sample_manifest.json";
    const json pre = manifest_dependency(pre_manifest_path, "synth-filter", "preprocess");
    const json sm = manifest_dependency(sample_manifest_path, "synth-filter", "synth-sample");

    const auto inputs = hash_files({pre_manifest_path, sample_manifest_path});
    if (stage_up_to_date(state_path, cfg_hash, inputs, out_root)) {
        oc.skipped = true;
        oc.message = "synth-filter outputs up to date";
        log_line(log, "[synth-filter] up to date, skipping");
        return oc;
    }

    std::vector<Slice2D> samples;
    for (const json& s : sm.at("samples")) {
        const auto sl = case_slices(out_root / s.at("file").get<std::string>(),
                                    cfg.preprocess.crop_size);
        samples.insert(samples.end(), sl.begin(), sl.end());
    }
    const std::vector<Slice2D> real =
        load_train_slices(pre, out_root, cfg.preprocess.crop_size);
    if (real.empty()) throw DataError("synth-filter found no real training slices");

    const FilterResult filt =
        memorization_filter(samples, real, cfg.synth.ssim_threshold, cfg.ssim);

    std::string report = "sample_id\tmax_ssim\tnearest_real_id\tkept\n";
    for (const FilterRecord& r : filt.report) {
        report += r.sample_id + "\t" + fmt(r.max_ssim) + "\t" + r.nearest_real_id + "\t" +
                  (r.kept ? "kept" : "rejected") + "\n";
    }
    const fs::path report_path = stage_dir / "filter_report.tsv";
    write_text_file(report_path.string(), report);

    ensure_directory((stage_dir / "samples").string());
    json kept = json::array();
    std::vector<fs::path> outputs{report_path};
    for (const Slice2D& s : filt.kept) {
        const fs::path sp = stage_dir / "samples" / (s.case_id + ".nii.gz");
        save_volume(slice_to_volume(s, cfg.preprocess.target_spacing), sp.string());
        outputs.push_back(sp);
        kept.push_back({{"id", s.case_id}, {"file", rel_to(out_root, sp)}});
    }

    json manifest;
    manifest["config_hash"] = cfg_hash;
    manifest["code_version"] = kCodeVersion;
    manifest["checkpoint_id"] = sm.at("checkpoint_id").get<std::string>();
    manifest["kept"] = kept;
    manifest["rejected_count"] = filt.rejected.size();
    const fs::path manifest_path = stage_dir / "manifest.json";
    write_json_file(manifest_path.string(), manifest);
    outputs.push_back(manifest_path);
    write_stage_state(state_path, cfg_hash, inputs, outputs, out_root);
    oc.message = std::to_string(filt.kept.size()) + " synthetic slices kept, " +
                 std::to_string(filt.rejected.size()) + " rejected";
    log_line(log, "[synth-filter] " + oc.message);
    return oc;
}

StageOutcome run_stage_train(const RunConfig& cfg, const std::string& cfg_hash,
                             std::ostream* log) {
    StageOutcome oc{Stage::Train};
    const fs::path out_root = cfg.paths.out_dir;
    const fs::path stage_dir = out_root / "train";
    const fs::path state_path = stage_dir / "state.json";
    const fs::path pre_manifest_path = out_root / "preprocess" / "manifest.json";
    const json pre = manifest_dependency(pre_manifest_path, "train", "preprocess");

    std::vector<fs::path> input_files{pre_manifest_path};
    const fs::path synth_manifest_path = out_root / "synth" / "manifest.json";
    const bool with_synth = cfg.use_synthetic_slices && fs::exists(synth_manifest_path);
    if (with_synth) input_files.push_back(synth_manifest_path);
    const auto inputs = hash_files(input_files);
    if (stage_up_to_date(state_path, cfg_hash, inputs, out_root)) {
        oc.skipped = true;
        oc.message = "outputs up to date";
        log_line(log, "[train] up to date, skipping");
        return oc;
    }

    const std::vector<json> train_cases = manifest_cases(pre, "train");
    if (train_cases.empty()) throw DataError("train stage found no cases in group 'train'");

    std::vector<CaseKey> keys;
    for (const json& c : train_cases) {
        keys.push_back({c.at("case_id").get<std::string>(),
                        c.at("patient_key").get<std::string>()});
    }
    SplitSpec spec = cfg.split;
    spec.seed = fanout_seed(cfg.seed, "split");
    const PatientSplit split = split_patients(keys, spec);

    auto collect = [&](const std::vector<CaseKey>& part) {
        std::vector<Slice2D> slices;
        for (const CaseKey& k : part) {
            for (const json& c : train_cases) {
                if (c.at("case_id").get<std::string>() != k.case_id) continue;
                const auto s = case_slices(out_root / c.at("volume").get<std::string>(),
                                           cfg.preprocess.crop_size, k.case_id);
                slices.insert(slices.end(), s.begin(), s.end());
            }
        }
        return slices;
    };
    std::vector<Slice2D> train_slices = collect(split.train);
    const std::vector<Slice2D> val_slices = collect(split.val);

    AugmentationPolicy policy = cfg.augmentation;
    policy.seed = fanout_seed(cfg.seed, "augment");
    train_slices = expand_training_set(train_slices, policy);

    std::size_t n_synth = 0;
    if (with_synth) {
        const json sm = read_json_file(synth_manifest_path.string());
        for (const json& k : sm.at("kept")) {
            const Volume v = load_volume((out_root / k.at("file").get<std::string>()).string());
            const auto s = extract_slices(v, cfg.preprocess.crop_size);
            train_slices.insert(train_slices.end(), s.begin(), s.end());
            n_synth += s.size();
        }
    }
    log_line(log, "[train] " + std::to_string(train_slices.size()) + " training slices (" +
                      std::to_string(n_synth) + " synthetic), " +
                      std::to_string(val_slices.size()) + " validation slices");

    ensure_directory(stage_dir.string());
    ResVae model(cfg.resvae);
    model.init(fanout_seed(cfg.seed, "model-init"));
    auto extractor = make_extractor(cfg.perceptual_kind, fanout_seed(cfg.seed, "perceptual"));
    TrainConfig tc = cfg.train;
    tc.seed = fanout_seed(cfg.seed, "train");

    std::ofstream hist((stage_dir / "history.jsonl").string(), std::ios::binary);
    const TrainResult tr =
        train(model, train_slices, val_slices, tc, cfg.loss, cfg.ssim, *extractor, &hist);
    hist.close();
    log_line(log, "[train] best validation loss " + fmt(tr.best_val) + " at epoch " +
                      std::to_string(tr.best_epoch) + " (stopped after " +
                      std::to_string(tr.stop_epoch) + ")");

    CheckpointPayload ckpt = model.to_checkpoint(cfg_hash);
    ckpt.code_version = kCodeVersion;
    const std::string ckpt_id = checkpoint_digest(ckpt);
    const fs::path ckpt_path = stage_dir / "resvae.ckpt";
    write_checkpoint(ckpt, ckpt_path.string());

    json split_json;
    split_json["train_patients"] = split.train_patients;
    split_json["val_patients"] = split.val_patients;
    json tc_cases = json::array(), vc_cases = json::array();
    for (const CaseKey& k : split.train) tc_cases.push_back(k.case_id);
    for (const CaseKey& k : split.val) vc_cases.push_back(k.case_id);
    split_json["train_cases"] = tc_cases;
    split_json["val_cases"] = vc_cases;
    const fs::path split_path = stage_dir / "split.json";
    write_json_file(split_path.string(), split_json);

    json manifest;
    manifest["config_hash"] = cfg_hash;
    manifest["code_version"] = kCodeVersion;
    manifest["checkpoint"] = rel_to(out_root, ckpt_path);
    manifest["checkpoint_id"] = ckpt_id;
    manifest["best_epoch"] = tr.best_epoch;
    manifest["stop_epoch"] = tr.stop_epoch;
    manifest["best_val"] = tr.best_val;
    manifest["n_train_slices"] = train_slices.size();
    manifest["n_val_slices"] = val_slices.size();
    manifest["n_synthetic_slices"] = n_synth;
    const fs::path manifest_path = stage_dir / "manifest.json";
    write_json_file(manifest_path.string(), manifest);

    write_stage_state(state_path, cfg_hash, inputs,
                      {ckpt_path, split_path, manifest_path, stage_dir / "history.jsonl"},
                      out_root);
    oc.message = "best val " + fmt(tr.best_val) + " @ epoch " + std::to_string(tr.best_epoch);
    return oc;
}

StageOutcome run_stage_infer(const RunConfig& cfg, const std::string& cfg_hash,
                             std::ostream* log) {
    StageOutcome oc{Stage::Infer};
    const fs::path out_root = cfg.paths.out_dir;
    const fs::path stage_dir = out_root / "infer";
    const fs::path state_path = stage_dir / "state.json";
    const fs::path pre_manifest_path = out_root / "preprocess" / "manifest.json";
    const fs::path train_manifest_path = out_root / "train" / "manifest.json";
    const json pre = manifest_dependency(pre_manifest_path, "infer", "preprocess");
    const json tm = manifest_dependency(train_manifest_path, "infer", "train");

    const fs::path ckpt_path = out_root / tm.at("checkpoint").get<std::string>();
    if (!fs::exists(ckpt_path)) {
        throw DataError("stage 'infer' requires the checkpoint '" + ckpt_path.string() +
                        "'; run the train stage first");
    }
    const auto inputs = hash_files({pre_manifest_path, train_manifest_path, ckpt_path});
    if (stage_up_to_date(state_path, cfg_hash, inputs, out_root)) {
        oc.skipped = true;
        oc.message = "outputs up to date";
        log_line(log, "[infer] up to date, skipping");
        return oc;
    }

    const CheckpointPayload payload = read_checkpoint(ckpt_path.string());
    ResVae model = ResVae::from_checkpoint(payload);
    require_matching_config(cfg.resvae, model.config());
    const std::string ckpt_id = tm.at("checkpoint_id").get<std::string>();

    const std::vector<json> eval_cases = manifest_cases(pre, "eval");
    if (eval_cases.empty()) throw DataError("infer stage found no cases in group 'eval'");

    ensure_directory((stage_dir / "heatmaps").string());
    json mcases = json::array();
    std::vector<fs::path> outputs;
    for (const json& c : eval_cases) {
        const std::string case_id = c.at("case_id").get<std::string>();
        const Volume v = load_volume((out_root / c.at("volume").get<std::string>()).string());
        const std::vector<Slice2D> slices = extract_slices(v, cfg.preprocess.crop_size);
        Volume heat;
        heat.shape = v.shape;
        heat.spacing = v.spacing;
        heat.identifier = case_id;
        heat.voxels.assign(v.voxels.size(), 0.0f);
        for (const Slice2D& s : slices) {
            const Slice2D recon = model.reconstruct(s);
            const AnomalyMap m = apply_pipeline(s, recon, cfg.postprocess);
            for (int y = 0; y < m.values.h; ++y) {
                for (int x = 0; x < m.values.w; ++x) {
                    heat.at(x, y, s.slice_index) = static_cast<float>(m.values.at(x, y));
                }
            }
        }
        const fs::path hp = stage_dir / "heatmaps" / (case_id + ".nii.gz");
        save_volume(heat, hp.string());
        outputs.push_back(hp);
        mcases.push_back({{"case_id", case_id},
                          {"heatmap", rel_to(out_root, hp)},
                          {"n_slices", v.shape[2]}});
        log_line(log, "[infer] " + case_id + " -> " + rel_to(out_root, hp));
    }

    json manifest;
    manifest["config_hash"] = cfg_hash;
    manifest["code_version"] = kCodeVersion;
    manifest["checkpoint_id"] = ckpt_id;
    manifest["cases"] = mcases;
    const fs::path manifest_path = stage_dir / "manifest.json";
    write_json_file(manifest_path.string(), manifest);
    outputs.push_back(manifest_path);
    write_stage_state(state_path, cfg_hash, inputs, outputs, out_root);
    oc.message = std::to_string(mcases.size()) + " heatmap volumes written";
    return oc;
}

std::string sanitize_filename(std::string s) {
    for (char& c : s) {
        if (c == '/' || c == '\\' || c == ' ' || c == ':') c = '-';
    }
    return s;
}

StageOutcome run_stage_evaluate(const RunConfig& cfg, const std::string& cfg_hash,
                                std::ostream* log) {
    StageOutcome oc{Stage::Evaluate};
    const fs::path out_root = cfg.paths.out_dir;
    const fs::path stage_dir = out_root / "evaluate";
    const fs::path state_path = stage_dir / "state.json";
    const fs::path pre_manifest_path = out_root / "preprocess" / "manifest.json";
    const fs::path infer_manifest_path = out_root / "infer" / "manifest.json";
    const json pre = manifest_dependency(pre_manifest_path, "evaluate", "preprocess");
    const json im = manifest_dependency(infer_manifest_path, "evaluate", "infer");

    const std::string heat_hash = im.at("config_hash").get<std::string>();
    if (heat_hash != cfg_hash) {
        throw DataError("refusing to evaluate: heatmaps carry config hash " + heat_hash +
                        " but the current config hashes to " + cfg_hash);
    }

    const auto inputs = hash_files({pre_manifest_path, infer_manifest_path});
    if (stage_up_to_date(state_path, cfg_hash, inputs, out_root)) {
        oc.skipped = true;
        oc.message = "outputs up to date";
        log_line(log, "[evaluate] up to date, skipping");
        return oc;
    }

    std::map<std::string, json> pre_by_id;
    for (const json& c : manifest_cases(pre, "eval")) {
        pre_by_id[c.at("case_id").get<std::string>()] = c;
    }

    std::vector<EvalCase> cases;
    std::set<std::int32_t> derived_ids;
    for (const json& c : im.at("cases")) {
        const std::string case_id = c.at("case_id").get<std::string>();
        auto it = pre_by_id.find(case_id);
        if (it == pre_by_id.end()) {
            throw DataError("heatmap case '" + case_id + "' is absent from the preprocess "
                            "manifest");
        }
        const json& pc = it->second;
        EvalCase ec;
        ec.case_id = case_id;
        const Volume heat =
            load_volume((out_root / c.at("heatmap").get<std::string>()).string());
        for (int z = 0; z < heat.shape[2]; ++z) {
            Grid2D g(heat.shape[0], heat.shape[1]);
            for (int y = 0; y < heat.shape[1]; ++y) {
                for (int x = 0; x < heat.shape[0]; ++x) g.at(x, y) = heat.at(x, y, z);
            }
            ec.maps.push_back(std::move(g));
        }
        const auto names =
            load_label_names(out_root / pc.at("labels").get<std::string>());
        for (const auto& [annot, rel] : pc.at("masks").items()) {
            ec.annotations[annot] =
                load_mask((out_root / rel.get<std::string>()).string(), names, annot);
        }
        ec.metadata =
            load_case_metadata((out_root / pc.at("metadata").get<std::string>()).string());
        for (const auto& [id, name] : names) {
            if (id == 0) continue;
            if (std::find(cfg.preprocess.uterus_labels.begin(),
                          cfg.preprocess.uterus_labels.end(),
                          id) == cfg.preprocess.uterus_labels.end()) {
                derived_ids.insert(id);
            }
        }
        cases.push_back(std::move(ec));
    }

    EvaluateOptions opt = cfg.evaluate;
    if (opt.pathology_ids.empty()) {
        opt.pathology_ids.assign(derived_ids.begin(), derived_ids.end());
    }
    if (opt.pathology_ids.empty()) {
        throw DataError("evaluate found no pathology labels: configure evaluate.pathology_ids "
                        "or provide masks with non-structure labels");
    }

    const EvaluationResult res = build_report(cases, opt);

    const std::string ckpt_id = im.at("checkpoint_id").get<std::string>();
    std::string tsv;
    tsv += "# config_hash=" + cfg_hash + "\n";
    tsv += "# checkpoint_id=" + ckpt_id + "\n";
    tsv += std::string("# code_version=") + kCodeVersion + "\n";
    tsv += "stratum_kind\tstratum\tn_cases\taccuracy\tprecision\tsensitivity\tspecificity\tauc"
           "\tthreshold\ttp\tfp\ttn\tfn\n";
    std::vector<std::string> notes;
    auto add_row = [&](const MetricsReport& r) {
        if (r.skipped) {
            notes.push_back("# note: " + r.stratum_kind + "/" + r.stratum + " " + r.note);
            return;
        }
        tsv += r.stratum_kind + "\t" + r.stratum + "\t" + std::to_string(r.n_cases) + "\t" +
               fmt(r.accuracy) + "\t" + fmt(r.precision) + "\t" + fmt(r.sensitivity) + "\t" +
               fmt(r.specificity) + "\t" + fmt(r.auc) + "\t" + fmt(r.threshold) + "\t" +
               std::to_string(r.counts.tp) + "\t" + std::to_string(r.counts.fp) + "\t" +
               std::to_string(r.counts.tn) + "\t" + std::to_string(r.counts.fn) + "\n";
    };
    for (const MetricsReport& r : res.pathology) add_row(r);
    for (const MetricsReport& r : res.position) add_row(r);
    for (const MetricsReport& r : res.annotator) add_row(r);
    add_row(res.overall);
    add_row(res.overall_weighted);
    for (const std::string& n : notes) tsv += n + "\n";

    ensure_directory(stage_dir.string());
    const fs::path metrics_path = stage_dir / "metrics.tsv";
    write_text_file(metrics_path.string(), tsv);
    std::vector<fs::path> outputs{metrics_path};

    ensure_directory((stage_dir / "roc").string());
    for (const auto& [key, curve] : res.curves) {
        std::string csv = "fpr,tpr,threshold\n";
        const std::size_t stride = std::max<std::size_t>(1, curve.points.size() / 2000);
        for (std::size_t i = 0; i < curve.points.size(); i += stride) {
            const RocPoint& p = curve.points[i];
            csv += fmt(p.fpr) + "," + fmt(p.tpr) + "," + fmt(p.threshold) + "\n";
        }
        const RocPoint& last = curve.points.back();
        if ((curve.points.size() - 1) % stride != 0) {
            csv += fmt(last.fpr) + "," + fmt(last.tpr) + "," + fmt(last.threshold) + "\n";
        }
        const fs::path rp = stage_dir / "roc" / (sanitize_filename(key) + ".csv");
        write_text_file(rp.string(), csv);
        outputs.push_back(rp);
    }

    // Lesion volumetry against the reference annotator.
    std::string vol_tsv = "case_id\tlabel\tname\tvoxels\tvolume_ml\n";
    for (const EvalCase& c : cases) {
        auto it = c.annotations.find(opt.reference_annotator);
        if (it == c.annotations.end()) continue;
        const SegmentationMask& m = it->second;
        for (std::int32_t id : opt.pathology_ids) {
            auto nm = m.label_names.find(id);
            if (nm == m.label_names.end()) continue;
            const Spacing sp = cfg.preprocess.target_spacing;
            vol_tsv += c.case_id + "\t" + std::to_string(id) + "\t" + nm->second + "\t" +
                       std::to_string(m.count_label(id)) + "\t" +
                       fmt(lesion_volume(m, id, sp)) + "\n";
        }
    }
    const fs::path vol_path = stage_dir / "volumes.tsv";
    write_text_file(vol_path.string(), vol_tsv);
    outputs.push_back(vol_path);

    write_stage_state(state_path, cfg_hash, inputs, outputs, out_root);
    if (!res.overall.skipped) {
        oc.message = "overall auc " + fmt(res.overall.auc);
        log_line(log, "[evaluate] overall auc " + fmt(res.overall.auc) + " -> " +
                          rel_to(out_root, metrics_path));
    } else {
        oc.message = "report written (no scored strata)";
    }
    return oc;
}

StageOutcome run_stage_bench(const RunConfig& cfg, const std::string& cfg_hash,
                             std::ostream* log) {
    StageOutcome oc{Stage::Bench};
    const fs::path out_root = cfg.paths.out_dir;
    const fs::path stage_dir = out_root / "bench";
    const fs::path train_manifest_path = out_root / "train" / "manifest.json";
    const json tm = manifest_dependency(train_manifest_path, "bench", "train");
    const fs::path ckpt_path = out_root / tm.at("checkpoint").get<std::string>();
    if (!fs::exists(ckpt_path)) {
        throw DataError("stage 'bench' requires the checkpoint '" + ckpt_path.string() +
                        "'; run the train stage first");
    }

    ResVae model = ResVae::from_checkpoint(read_checkpoint(ckpt_path.string()));
    require_matching_config(cfg.resvae, model.config());
    const BenchResult r =
        latency_bench(model, cfg.bench.n_slices, cfg.bench.warmup, cfg.seed);

    ensure_directory(stage_dir.string());
    json out;
    out["config_hash"] = cfg_hash;
    out["code_version"] = kCodeVersion;
    out["checkpoint_id"] = tm.at("checkpoint_id").get<std::string>();
    out["ms_per_slice"] = r.ms_per_slice;
    out["fps"] = r.fps;
    out["s_per_volume"] = r.s_per_volume;
    out["n_slices"] = r.n_slices;
    out["warmup"] = r.warmup;
    out["reference"] = {{"ms_per_slice", 10.8}, {"fps", 92.6}, {"s_per_volume", 0.324}};
    write_json_file((stage_dir / "latency.json").string(), out);

    log_line(log, "[bench] " + fmt(r.ms_per_slice) + " ms/slice, " + fmt(r.fps) + " FPS, " +
                      fmt(r.s_per_volume) + " s per 30-slice volume");
    log_line(log, "[bench] reference point (reported, not asserted on this hardware): "
                  "10.8 ms/slice = 92.6 FPS = 0.324 s per 30-slice volume");
    oc.message = fmt(r.ms_per_slice) + " ms/slice";
    return oc;
}

}  // namespace

StageOutcome run_synth_step(const RunConfig& cfg, SynthStep step, std::ostream* log) {
    cfg.validate();
    if (cfg.paths.out_dir.empty()) throw ValidationError("pipeline needs paths.out_dir");
    ensure_directory(cfg.paths.out_dir);
    const std::string cfg_hash = config_hash(cfg);
    switch (step) {
        case SynthStep::Train: return synth_train_step(cfg, cfg_hash, log);
        case SynthStep::Sample: return synth_sample_step(cfg, cfg_hash, log);
        case SynthStep::Filter: return synth_filter_step(cfg, cfg_hash, log);
    }
    throw ValidationError("unknown synth step");
}

void generate_phantom_data(const RunConfig& cfg, std::ostream* log) {
    if (cfg.paths.data_dir.empty()) {
        throw ValidationError("phantom generation needs paths.data_dir");
    }
    const auto train = make_phantom_corpus(cfg.phantom.n_train,
                                           fanout_seed(cfg.seed, "phantom-train"), "none",
                                           "train-phantom");
    write_phantom_corpus(train, (fs::path(cfg.paths.data_dir) / "train").string());
    const auto eval_cases = make_phantom_corpus(cfg.phantom.n_eval,
                                                fanout_seed(cfg.seed, "phantom-eval"),
                                                cfg.phantom.lesion, "eval-phantom");
    write_phantom_corpus(eval_cases, (fs::path(cfg.paths.data_dir) / "eval").string());
    log_line(log, "[phantom] wrote " + std::to_string(train.size()) + " train and " +
                      std::to_string(eval_cases.size()) + " eval cases (lesion: " +
                      cfg.phantom.lesion + ") under " + cfg.paths.data_dir);
}

PipelineResult run_pipeline(const RunConfig& cfg, const std::set<Stage>& stages,
                            std::ostream* log) {
    cfg.validate();
    if (cfg.paths.out_dir.empty()) throw ValidationError("pipeline needs paths.out_dir");
    if (stages.empty()) throw ValidationError("no stages requested");
    ensure_directory(cfg.paths.out_dir);
    const std::string cfg_hash = config_hash(cfg);
    write_json_file((fs::path(cfg.paths.out_dir) / "config.json").string(),
                    run_config_to_json(cfg));

    PipelineResult result;
    const Stage order[] = {Stage::Preprocess, Stage::Synth, Stage::Train,
                           Stage::Infer,      Stage::Evaluate, Stage::Bench};
    for (Stage s : order) {
        if (!stages.count(s)) continue;
        switch (s) {
            case Stage::Preprocess:
                result.outcomes.push_back(run_stage_preprocess(cfg, cfg_hash, log));
                break;
            case Stage::Synth:
                result.outcomes.push_back(synth_train_step(cfg, cfg_hash, log));
                result.outcomes.push_back(synth_sample_step(cfg, cfg_hash, log));
                result.outcomes.push_back(synth_filter_step(cfg, cfg_hash, log));
                break;
            case Stage::Train:
                result.outcomes.push_back(run_stage_train(cfg, cfg_hash, log));
                break;
            case Stage::Infer:
                result.outcomes.push_back(run_stage_infer(cfg, cfg_hash, log));
                break;
            case Stage::Evaluate:
                result.outcomes.push_back(run_stage_evaluate(cfg, cfg_hash, log));
                break;
            case Stage::Bench:
                result.outcomes.push_back(run_stage_bench(cfg, cfg_hash, log));
                break;
        }
    }
    return result;
}

}  // namespace uad
