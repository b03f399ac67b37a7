#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "json.hpp"
#include "uad/losses.hpp"
#include "uad/resvae.hpp"
#include "uad/ssim.hpp"
#include "uad/volume.hpp"

namespace uad {

struct TrainConfig {
    int epochs = 100;
    double learning_rate = 1e-4;
    int patience = 15;
    double grad_clip_norm = 1.0;
    int batch_size = 32;
    std::uint64_t seed = 0;
    double weight_decay = 0.01;

    void validate() const;
};

/// One structured log record per epoch.
struct EpochStats {
    int epoch = 0;
    double beta = 0.0;
    LossBreakdown train_mean;  // per-term means over training samples
    LossBreakdown val_mean;    // per-term means over validation samples
    double grad_norm_mean = 0.0;
    double grad_norm_max = 0.0;
    double best_val = 0.0;  // running best validation total (non-increasing)
    bool is_best = false;

    nlohmann::json to_json() const;
};

struct TrainResult {
    std::vector<EpochStats> history;
    int best_epoch = -1;  // epoch index whose weights the model holds on return
    int stop_epoch = 0;   // number of epochs actually run (<= cfg.epochs)
    double best_val = 0.0;
};

/// Optimizes the model in place and restores the best-validation weights
/// before returning. When `log` is given, one JSON line is written per epoch.
TrainResult train(ResVae& model, const std::vector<Slice2D>& train_slices,
                  const std::vector<Slice2D>& val_slices, const TrainConfig& cfg,
                  const LossWeights& weights, const SsimConfig& ssim_cfg,
                  FeatureExtractor& extractor, std::ostream* log = nullptr);

}  // namespace uad
