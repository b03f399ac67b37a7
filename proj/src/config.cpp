#include "uad/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "uad/errors.hpp"
#include "uad/hash.hpp"

namespace uad {

void SynthConfig::validate() const {
    if (T < 1) throw ValidationError("synth.T must be >= 1");
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end) {
        throw ValidationError("synth betas must satisfy 0 < beta_start <= beta_end < 1");
    }
    arch.validate();
    if (steps < 1) throw ValidationError("synth.steps must be positive");
    if (batch_size < 1) throw ValidationError("synth.batch_size must be positive");
    if (val_batch < 1) throw ValidationError("synth.val_batch must be positive");
    if (!(learning_rate > 0.0)) throw ValidationError("synth.learning_rate must be positive");
    if (weight_decay < 0.0) throw ValidationError("synth.weight_decay must be nonnegative");
    if (n_samples < 1) throw ValidationError("synth.n_samples must be positive");
    if (!(ssim_threshold >= -1.0 && ssim_threshold <= 1.0)) {
        throw ValidationError("synth.ssim_threshold must lie in [-1,1]");
    }
}

void BenchConfig::validate() const {
    if (n_slices < 1) throw ValidationError("bench.n_slices must be positive");
    if (warmup < 0) throw ValidationError("bench.warmup must be nonnegative");
}

void PhantomConfig::validate() const {
    if (n_train < 1) throw ValidationError("phantom.n_train must be positive");
    if (n_eval < 1) throw ValidationError("phantom.n_eval must be positive");
    if (lesion != "none" && lesion != "disc" && lesion != "diffuse") {
        throw ValidationError("phantom.lesion must be one of none|disc|diffuse");
    }
}

void RunConfig::validate() const {
    preprocess.validate();
    split.validate();
    augmentation.validate();
    resvae.validate();
    loss.validate();
    train.validate();
    ssim.validate();
    postprocess.validate();
    synth.validate();
    bench.validate();
    phantom.validate();
    if (perceptual_kind != "identity" && perceptual_kind != "random") {
        throw ValidationError("perceptual must be 'identity' or 'random'");
    }
    if (evaluate.reference_annotator.empty()) {
        throw ValidationError("evaluate.reference_annotator must be nonempty");
    }
    if (resvae.input_size != preprocess.crop_size) {
        throw ValidationError("model input size must equal the preprocess crop size");
    }
    if (synth.arch.image_size != preprocess.crop_size) {
        throw ValidationError("diffusion image size must equal the preprocess crop size");
    }
    if (ssim.window > preprocess.crop_size) {
        throw ValidationError("ssim window exceeds the working slice size");
    }
}

namespace {

using nlohmann::json;

void require_keys(const json& j, const std::set<std::string>& allowed,
                  const std::string& where) {
    if (!j.is_object()) {
        throw ValidationError("config section '" + (where.empty() ? "<root>" : where) +
                              "' must be a JSON object");
    }
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!allowed.count(it.key())) {
            throw ValidationError("unknown config key '" +
                                  (where.empty() ? it.key() : where + "." + it.key()) + "'");
        }
    }
}

template <typename T>
void get_if(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ValidationError("config key '" + where + "." + key + "': " + e.what());
    }
}

}  // namespace

RunConfig run_config_from_json(const json& j) {
    RunConfig cfg;
    require_keys(j, {"seed", "paths", "preprocess", "split", "augmentation", "resvae", "loss",
                     "train", "ssim", "postprocess", "synth", "perceptual", "evaluate", "bench",
                     "phantom", "use_synthetic_slices"},
                 "");
    get_if(j, "seed", cfg.seed, "<root>");
    get_if(j, "use_synthetic_slices", cfg.use_synthetic_slices, "<root>");
    get_if(j, "perceptual", cfg.perceptual_kind, "<root>");

    if (j.contains("paths")) {
        const json& p = j.at("paths");
        require_keys(p, {"data_dir", "out_dir"}, "paths");
        get_if(p, "data_dir", cfg.paths.data_dir, "paths");
        get_if(p, "out_dir", cfg.paths.out_dir, "paths");
    }
    if (j.contains("preprocess")) {
        const json& p = j.at("preprocess");
        require_keys(p, {"target_spacing", "working_shape", "crop_size", "uterus_labels"},
                     "preprocess");
        get_if(p, "target_spacing", cfg.preprocess.target_spacing, "preprocess");
        get_if(p, "working_shape", cfg.preprocess.working_shape, "preprocess");
        get_if(p, "crop_size", cfg.preprocess.crop_size, "preprocess");
        get_if(p, "uterus_labels", cfg.preprocess.uterus_labels, "preprocess");
    }
    if (j.contains("split")) {
        const json& p = j.at("split");
        require_keys(p, {"train_fraction"}, "split");
        get_if(p, "train_fraction", cfg.split.train_fraction, "split");
    }
    if (j.contains("augmentation")) {
        const json& p = j.at("augmentation");
        require_keys(p,
                     {"p_hflip", "p_vflip", "p_clahe", "clahe_clip", "copies_per_slice",
                      "clahe_tiles", "clahe_bins"},
                     "augmentation");
        get_if(p, "p_hflip", cfg.augmentation.p_hflip, "augmentation");
        get_if(p, "p_vflip", cfg.augmentation.p_vflip, "augmentation");
        get_if(p, "p_clahe", cfg.augmentation.p_clahe, "augmentation");
        get_if(p, "clahe_clip", cfg.augmentation.clahe_clip, "augmentation");
        get_if(p, "copies_per_slice", cfg.augmentation.copies_per_slice, "augmentation");
        get_if(p, "clahe_tiles", cfg.augmentation.clahe_tiles, "augmentation");
        get_if(p, "clahe_bins", cfg.augmentation.clahe_bins, "augmentation");
    }
    if (j.contains("resvae")) {
        const json& p = j.at("resvae");
        require_keys(p, {"channels", "latent_dim", "negative_slope", "upsample_mode"}, "resvae");
        get_if(p, "channels", cfg.resvae.channels, "resvae");
        get_if(p, "latent_dim", cfg.resvae.latent_dim, "resvae");
        get_if(p, "negative_slope", cfg.resvae.negative_slope, "resvae");
        get_if(p, "upsample_mode", cfg.resvae.upsample_mode, "resvae");
    }
    if (j.contains("loss")) {
        const json& p = j.at("loss");
        require_keys(p,
                     {"w_ssim", "w_perc", "beta_start", "beta_end", "anneal_epochs",
                      "perc_stage_weights"},
                     "loss");
        get_if(p, "w_ssim", cfg.loss.w_ssim, "loss");
        get_if(p, "w_perc", cfg.loss.w_perc, "loss");
        get_if(p, "beta_start", cfg.loss.beta_start, "loss");
        get_if(p, "beta_end", cfg.loss.beta_end, "loss");
        get_if(p, "anneal_epochs", cfg.loss.anneal_epochs, "loss");
        get_if(p, "perc_stage_weights", cfg.loss.perc_stage_weights, "loss");
    }
    if (j.contains("train")) {
        const json& p = j.at("train");
        require_keys(p,
                     {"epochs", "learning_rate", "patience", "grad_clip_norm", "batch_size",
                      "weight_decay"},
                     "train");
        get_if(p, "epochs", cfg.train.epochs, "train");
        get_if(p, "learning_rate", cfg.train.learning_rate, "train");
        get_if(p, "patience", cfg.train.patience, "train");
        get_if(p, "grad_clip_norm", cfg.train.grad_clip_norm, "train");
        get_if(p, "batch_size", cfg.train.batch_size, "train");
        get_if(p, "weight_decay", cfg.train.weight_decay, "train");
    }
    if (j.contains("ssim")) {
        const json& p = j.at("ssim");
        require_keys(p, {"window", "window_sigma", "k1", "k2", "dynamic_range"}, "ssim");
        get_if(p, "window", cfg.ssim.window, "ssim");
        get_if(p, "window_sigma", cfg.ssim.window_sigma, "ssim");
        get_if(p, "k1", cfg.ssim.k1, "ssim");
        get_if(p, "k2", cfg.ssim.k2, "ssim");
        get_if(p, "dynamic_range", cfg.ssim.dynamic_range, "ssim");
    }
    if (j.contains("postprocess")) {
        const json& p = j.at("postprocess");
        require_keys(p, {"percentile", "radius_px", "median_kernel", "center"}, "postprocess");
        get_if(p, "percentile", cfg.postprocess.percentile, "postprocess");
        get_if(p, "radius_px", cfg.postprocess.radius_px, "postprocess");
        get_if(p, "median_kernel", cfg.postprocess.median_kernel, "postprocess");
        if (p.contains("center") && !p.at("center").is_null()) {
            std::array<double, 2> c{};
            get_if(p, "center", c, "postprocess");
            cfg.postprocess.center = std::make_pair(c[0], c[1]);
        }
    }
    if (j.contains("synth")) {
        const json& p = j.at("synth");
        require_keys(p,
                     {"T", "beta_start", "beta_end", "channels", "time_embed_dim", "steps",
                      "batch_size", "val_batch", "learning_rate", "weight_decay", "n_samples",
                      "ssim_threshold"},
                     "synth");
        get_if(p, "T", cfg.synth.T, "synth");
        get_if(p, "beta_start", cfg.synth.beta_start, "synth");
        get_if(p, "beta_end", cfg.synth.beta_end, "synth");
        get_if(p, "channels", cfg.synth.arch.channels, "synth");
        get_if(p, "time_embed_dim", cfg.synth.arch.time_embed_dim, "synth");
        get_if(p, "steps", cfg.synth.steps, "synth");
        get_if(p, "batch_size", cfg.synth.batch_size, "synth");
        get_if(p, "val_batch", cfg.synth.val_batch, "synth");
        get_if(p, "learning_rate", cfg.synth.learning_rate, "synth");
        get_if(p, "weight_decay", cfg.synth.weight_decay, "synth");
        get_if(p, "n_samples", cfg.synth.n_samples, "synth");
        get_if(p, "ssim_threshold", cfg.synth.ssim_threshold, "synth");
    }
    if (j.contains("evaluate")) {
        const json& p = j.at("evaluate");
        require_keys(p, {"pathology_ids", "reference_annotator", "experienced_annotators"},
                     "evaluate");
        get_if(p, "pathology_ids", cfg.evaluate.pathology_ids, "evaluate");
        get_if(p, "reference_annotator", cfg.evaluate.reference_annotator, "evaluate");
        get_if(p, "experienced_annotators", cfg.evaluate.experienced_annotators, "evaluate");
    }
    if (j.contains("bench")) {
        const json& p = j.at("bench");
        require_keys(p, {"n_slices", "warmup"}, "bench");
        get_if(p, "n_slices", cfg.bench.n_slices, "bench");
        get_if(p, "warmup", cfg.bench.warmup, "bench");
    }
    if (j.contains("phantom")) {
        const json& p = j.at("phantom");
        require_keys(p, {"n_train", "n_eval", "lesion"}, "phantom");
        get_if(p, "n_train", cfg.phantom.n_train, "phantom");
        get_if(p, "n_eval", cfg.phantom.n_eval, "phantom");
        get_if(p, "lesion", cfg.phantom.lesion, "phantom");
    }

    // The model and generator operate on the preprocessed crop.
    cfg.resvae.input_size = cfg.preprocess.crop_size;
    cfg.synth.arch.image_size = cfg.preprocess.crop_size;
    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    if (path.empty()) return run_config_from_json(json::object());
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
        return run_config_from_json(json::object());
    }
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ValidationError("config file '" + path + "' is not valid JSON: " + e.what());
    }
    return run_config_from_json(j);
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
    json center = nullptr;
    if (cfg.postprocess.center) {
        center = json::array({cfg.postprocess.center->first, cfg.postprocess.center->second});
    }
    return {
        {"seed", cfg.seed},
        {"paths", {{"data_dir", cfg.paths.data_dir}, {"out_dir", cfg.paths.out_dir}}},
        {"preprocess",
         {{"target_spacing", cfg.preprocess.target_spacing},
          {"working_shape", cfg.preprocess.working_shape},
          {"crop_size", cfg.preprocess.crop_size},
          {"uterus_labels", cfg.preprocess.uterus_labels}}},
        {"split", {{"train_fraction", cfg.split.train_fraction}}},
        {"augmentation",
         {{"p_hflip", cfg.augmentation.p_hflip},
          {"p_vflip", cfg.augmentation.p_vflip},
          {"p_clahe", cfg.augmentation.p_clahe},
          {"clahe_clip", cfg.augmentation.clahe_clip},
          {"copies_per_slice", cfg.augmentation.copies_per_slice},
          {"clahe_tiles", cfg.augmentation.clahe_tiles},
          {"clahe_bins", cfg.augmentation.clahe_bins}}},
        {"resvae",
         {{"channels", cfg.resvae.channels},
          {"latent_dim", cfg.resvae.latent_dim},
          {"negative_slope", cfg.resvae.negative_slope},
          {"upsample_mode", cfg.resvae.upsample_mode}}},
        {"loss",
         {{"w_ssim", cfg.loss.w_ssim},
          {"w_perc", cfg.loss.w_perc},
          {"beta_start", cfg.loss.beta_start},
          {"beta_end", cfg.loss.beta_end},
          {"anneal_epochs", cfg.loss.anneal_epochs},
          {"perc_stage_weights", cfg.loss.perc_stage_weights}}},
        {"train",
         {{"epochs", cfg.train.epochs},
          {"learning_rate", cfg.train.learning_rate},
          {"patience", cfg.train.patience},
          {"grad_clip_norm", cfg.train.grad_clip_norm},
          {"batch_size", cfg.train.batch_size},
          {"weight_decay", cfg.train.weight_decay}}},
        {"ssim",
         {{"window", cfg.ssim.window},
          {"window_sigma", cfg.ssim.window_sigma},
          {"k1", cfg.ssim.k1},
          {"k2", cfg.ssim.k2},
          {"dynamic_range", cfg.ssim.dynamic_range}}},
        {"postprocess",
         {{"percentile", cfg.postprocess.percentile},
          {"radius_px", cfg.postprocess.radius_px},
          {"median_kernel", cfg.postprocess.median_kernel},
          {"center", center}}},
        {"synth",
         {{"T", cfg.synth.T},
          {"beta_start", cfg.synth.beta_start},
          {"beta_end", cfg.synth.beta_end},
          {"channels", cfg.synth.arch.channels},
          {"time_embed_dim", cfg.synth.arch.time_embed_dim},
          {"steps", cfg.synth.steps},
          {"batch_size", cfg.synth.batch_size},
          {"val_batch", cfg.synth.val_batch},
          {"learning_rate", cfg.synth.learning_rate},
          {"weight_decay", cfg.synth.weight_decay},
          {"n_samples", cfg.synth.n_samples},
          {"ssim_threshold", cfg.synth.ssim_threshold}}},
        {"perceptual", cfg.perceptual_kind},
        {"evaluate",
         {{"pathology_ids", cfg.evaluate.pathology_ids},
          {"reference_annotator", cfg.evaluate.reference_annotator},
          {"experienced_annotators", cfg.evaluate.experienced_annotators}}},
        {"bench", {{"n_slices", cfg.bench.n_slices}, {"warmup", cfg.bench.warmup}}},
        {"phantom",
         {{"n_train", cfg.phantom.n_train},
          {"n_eval", cfg.phantom.n_eval},
          {"lesion", cfg.phantom.lesion}}},
        {"use_synthetic_slices", cfg.use_synthetic_slices},
    };
}

std::string config_hash(const RunConfig& cfg) {
    nlohmann::json j = run_config_to_json(cfg);
    j.erase("paths");
    return hash_string(j.dump());
}

}  // namespace uad
