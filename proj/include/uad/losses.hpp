#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

#include "uad/grid.hpp"
#include "uad/latent.hpp"
#include "uad/nn.hpp"
#include "uad/ssim.hpp"

namespace uad {

// --------------------------------------------------------------- weights --

struct LossWeights {
    double w_ssim = 0.5;
    double w_perc = 0.3;
    double beta_start = 1e-5;
    double beta_end = 1e-4;
    int anneal_epochs = 100;
    std::array<double, 2> perc_stage_weights{0.3, 0.15};

    void validate() const;
};

/// Linear KL anneal: beta_start at epoch 0 up to beta_end at anneal_epochs,
/// constant afterward.
double beta_schedule(int epoch, const LossWeights& w);

// ------------------------------------------------------------ extractors --

/// Produces two feature stages per input; used by the perceptual term.
/// Extractor weights are fixed — backward propagates only to the input.
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual int input_channels() const { return 1; }
    virtual std::vector<nn::Tensor> forward(const nn::Tensor& x) = 0;
    virtual nn::Tensor backward(const std::vector<nn::Tensor>& d_stages) = 0;
};

/// Features are the input itself at both stages.
class IdentityExtractor : public FeatureExtractor {
public:
    std::vector<nn::Tensor> forward(const nn::Tensor& x) override;
    nn::Tensor backward(const std::vector<nn::Tensor>& d_stages) override;
};

/// Two stride-2 convolution stages with fixed, seeded weights — the
/// desk-scale stand-in for a pretrained backbone's first two residual stages.
class RandomConvExtractor : public FeatureExtractor {
public:
    RandomConvExtractor(std::uint64_t seed, int c0 = 8, int c1 = 16, double slope = 0.01);

    std::vector<nn::Tensor> forward(const nn::Tensor& x) override;
    nn::Tensor backward(const std::vector<nn::Tensor>& d_stages) override;

    nn::Conv2d conv0, conv1;

private:
    nn::LeakyReLU act0_, act1_;
};

std::unique_ptr<FeatureExtractor> make_extractor(const std::string& kind, std::uint64_t seed);

// ----------------------------------------------------------------- terms --

/// Per-pixel mean squared error; optional gradient w.r.t. y.
double mse(const Grid2D& x, const Grid2D& y, Grid2D* dy = nullptr);

/// Closed-form KL(N(mu, sigma^2) || N(0, 1)) summed over dimensions.
double kl_divergence(const LatentDistribution& d);

/// Same KL from the log-variance parameterization, with optional gradients.
double kl_from_mu_logvar(const std::vector<double>& mu, const std::vector<double>& logvar,
                         std::vector<double>* dmu = nullptr,
                         std::vector<double>* dlogvar = nullptr);

/// 1 - ssim(x, y), in [0, 2]; optional gradient w.r.t. y.
double ssim_loss(const Grid2D& x, const Grid2D& y, const SsimConfig& cfg, Grid2D* dy = nullptr);

/// Stage-weighted mean-squared feature distance; optional gradient w.r.t. y.
double perceptual_loss(const Grid2D& x, const Grid2D& y, FeatureExtractor& extractor,
                       const std::array<double, 2>& stage_weights, Grid2D* dy = nullptr);

// ------------------------------------------------------------ composition --

struct LossBreakdown {
    double mse = 0.0;
    double ssim = 0.0;  // 1 - SSIM term, pre-weighting
    double kl = 0.0;
    double perceptual = 0.0;  // stage-weighted term, pre-0.3
    double beta = 0.0;
    double w_mse = 1.0;
    double w_ssim = 0.5;
    double w_perc = 0.3;
    double total = 0.0;
};

/// Single-slice composite loss (no gradients), mirroring the batch form.
LossBreakdown total_loss(const Grid2D& x, const Grid2D& recon, const LatentDistribution& d,
                         int epoch, const LossWeights& w, const SsimConfig& scfg,
                         FeatureExtractor& extractor);

/// Batch composite loss over NCHW tensors (C = 1). mu/logvar are (N, D, 1, 1).
/// Optional gradients w.r.t. recon, mu and logvar (KL path included).
LossBreakdown total_loss_batch(const nn::Tensor& x, const nn::Tensor& recon,
                               const nn::Tensor& mu, const nn::Tensor& logvar, int epoch,
                               const LossWeights& w, const SsimConfig& scfg,
                               FeatureExtractor& extractor, nn::Tensor* d_recon = nullptr,
                               nn::Tensor* d_mu = nullptr, nn::Tensor* d_logvar = nullptr);

// Grid <-> tensor shims shared by training and inference.
nn::Tensor grid_to_tensor(const Grid2D& g);
Grid2D tensor_to_grid(const nn::Tensor& t, int batch_index = 0, int channel = 0);

}  // namespace uad
