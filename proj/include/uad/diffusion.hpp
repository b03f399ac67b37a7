#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "uad/checkpoint.hpp"
#include "uad/grid.hpp"
#include "uad/nn.hpp"
#include "uad/ssim.hpp"
#include "uad/volume.hpp"

namespace uad {

/// Noise schedule for the forward diffusion process. `beta[i]` is the step
/// (i+1) variance; `alpha_bar[t]` is the cumulative signal fraction with
/// `alpha_bar[0] = 1` so that noising at t = 0 is the identity.
struct DiffusionSchedule {
    int T = 0;
    std::vector<double> beta;
    std::vector<double> alpha_bar;

    static DiffusionSchedule linear(int T, double beta_start = 1e-4, double beta_end = 2e-2);
    void validate() const;
};

struct DdpmConfig {
    std::vector<int> channels{8, 16, 32};  // one entry per resolution level
    int time_embed_dim = 32;
    int image_size = 96;
    double negative_slope = 0.01;

    int levels() const { return static_cast<int>(channels.size()); }
    void validate() const;
    bool operator==(const DdpmConfig&) const = default;
};

/// Sinusoidal timestep embedding (transformer-style frequency bank).
std::vector<double> sinusoidal_embedding(int t, int dim);

namespace detail {

/// Learned per-channel bias derived from the timestep embedding, added after
/// a convolution (broadcast over the spatial extent).
struct TimeBias {
    TimeBias() = default;
    TimeBias(const std::string& name, int embed_dim, int channels);
    nn::Tensor forward(const nn::Tensor& x, const nn::Tensor& temb);
    nn::Tensor backward(const nn::Tensor& dy);  // returns dx; accumulates lin grads

    nn::Linear lin;
};

struct DdpmDown {
    nn::Conv2d conv;
    TimeBias tb;
    nn::Conv2d refine;
    nn::LeakyReLU act1, act2;
};

struct DdpmUp {
    nn::UpsampleBilinear2x up;
    nn::Conv2d fuse;
    TimeBias tb;
    nn::Conv2d refine;
    nn::LeakyReLU act1, act2;
};

}  // namespace detail

/// Small encoder-decoder noise predictor with timestep conditioning. Predicts
/// the noise component of a noised slice; the output is unbounded.
class DdpmUNet {
public:
    explicit DdpmUNet(DdpmConfig cfg);
    void init(std::uint64_t seed);

    /// x: (N,1,S,S); t: one timestep per batch entry.
    nn::Tensor forward(const nn::Tensor& x, const std::vector<int>& t);
    nn::Tensor backward(const nn::Tensor& d_out);

    std::vector<nn::Param*> params();
    const DdpmConfig& config() const { return cfg_; }

    CheckpointPayload to_checkpoint(const std::string& config_hash) const;
    static DdpmUNet from_checkpoint(const CheckpointPayload& p);

private:
    DdpmConfig cfg_;
    nn::Conv2d stem_;
    nn::LeakyReLU stem_act_;
    std::vector<detail::DdpmDown> downs_;
    nn::Conv2d mid_;
    detail::TimeBias mid_tb_;
    nn::LeakyReLU mid_act_;
    std::vector<detail::DdpmUp> ups_;
    nn::Conv2d head_;
    std::vector<nn::Tensor> skip_cache_;
    std::vector<int> skip_channels_;
};

DdpmConfig ddpm_config_from_json(const nlohmann::json& j);
nlohmann::json ddpm_config_to_json(const DdpmConfig& cfg);

struct DdpmTrainConfig {
    DdpmConfig arch;
    int steps = 200;
    int batch_size = 16;
    int val_batch = 16;
    double learning_rate = 1e-3;
    double weight_decay = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
};

struct DdpmTrainResult {
    DdpmUNet model;
    double initial_val_loss = 0.0;  // fixed validation batch, before any update
    double final_val_loss = 0.0;    // same batch and noise, after training
    std::vector<double> step_losses;
};

/// q(x_t | x_0) with the given noise draw: sqrt(ab_t)·x0 + sqrt(1−ab_t)·eps.
Grid2D forward_noise(const Grid2D& x0, int t, const Grid2D& eps,
                     const DiffusionSchedule& schedule);

/// Trains the noise-prediction objective for a fixed number of optimizer
/// steps. The validation batch (slices, timesteps, and noise) is frozen up
/// front so initial/final losses are directly comparable.
DdpmTrainResult ddpm_train(const std::vector<Slice2D>& slices,
                           const DiffusionSchedule& schedule, const DdpmTrainConfig& cfg,
                           std::ostream* log = nullptr);

/// Ancestral sampling with per-sample seeds; pixels clipped to [0,1] at the end.
std::vector<Slice2D> ddpm_sample(DdpmUNet& model, const DiffusionSchedule& schedule, int n,
                                 std::uint64_t seed);

struct FilterRecord {
    std::string sample_id;
    double max_ssim = 0.0;
    std::string nearest_real_id;
    bool kept = true;
};

struct FilterResult {
    std::vector<Slice2D> kept;
    std::vector<Slice2D> rejected;
    std::vector<FilterRecord> report;
};

/// Rejects samples whose maximum SSIM against any real slice strictly exceeds
/// the threshold; a sample exactly at the threshold is kept.
FilterResult memorization_filter(const std::vector<Slice2D>& samples,
                                 const std::vector<Slice2D>& real, double threshold,
                                 const SsimConfig& cfg);

}  // namespace uad
