#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"
#include "uad/dataset.hpp"
#include "uad/diffusion.hpp"
#include "uad/losses.hpp"
#include "uad/metrics.hpp"
#include "uad/postprocess.hpp"
#include "uad/preprocess.hpp"
#include "uad/resvae.hpp"
#include "uad/ssim.hpp"
#include "uad/trainer.hpp"

namespace uad {

struct PathsConfig {
    std::string data_dir;  // input corpus (volumes, masks, metadata)
    std::string out_dir;   // artifact root
};

struct SynthConfig {
    int T = 1000;
    double beta_start = 1e-4;
    double beta_end = 2e-2;
    DdpmConfig arch;          // image_size wired to crop_size at load
    int steps = 200;
    int batch_size = 16;
    int val_batch = 16;
    double learning_rate = 1e-3;
    double weight_decay = 0.0;
    int n_samples = 16;
    double ssim_threshold = 0.35;

    void validate() const;
    DiffusionSchedule schedule() const { return DiffusionSchedule::linear(T, beta_start, beta_end); }
};

struct BenchConfig {
    int n_slices = 100;
    int warmup = 10;

    void validate() const;
};

struct PhantomConfig {
    int n_train = 64;
    int n_eval = 16;
    std::string lesion = "disc";  // none | disc | diffuse

    void validate() const;
};

/// Full run configuration; every field mirrors its owning module's config.
struct RunConfig {
    std::uint64_t seed = 0;
    PathsConfig paths;
    PreprocessOptions preprocess;
    SplitSpec split;
    AugmentationPolicy augmentation;
    ResVaeConfig resvae;
    LossWeights loss;
    TrainConfig train;
    SsimConfig ssim;
    PostprocessConfig postprocess;
    SynthConfig synth;
    std::string perceptual_kind = "random";  // identity | random
    EvaluateOptions evaluate;                // pathology_ids empty = derive from masks
    BenchConfig bench;
    PhantomConfig phantom;
    bool use_synthetic_slices = true;  // add filtered synthetic slices to training

    void validate() const;
};

/// Parses and validates a config file. An empty path or empty file yields the
/// all-defaults configuration; unknown keys are rejected by name.
RunConfig load_run_config(const std::string& path);
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& cfg);

/// Hash of the semantic configuration: filesystem paths are excluded so the
/// same experiment relocated on disk keeps its identity.
std::string config_hash(const RunConfig& cfg);

}  // namespace uad
