#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "uad/checkpoint.hpp"
#include "uad/latent.hpp"
#include "uad/nn.hpp"
#include "uad/volume.hpp"

namespace uad {

struct ResVaeConfig {
    std::vector<int> channels{32, 64, 128, 256};  // one residual block per entry
    int latent_dim = 256;
    double negative_slope = 0.01;
    std::string upsample_mode = "bilinear";  // decoder scale-2 upsampling
    int input_size = 96;

    int blocks() const { return static_cast<int>(channels.size()); }
    int bottleneck() const { return input_size >> blocks(); }
    void validate() const;
    bool operator==(const ResVaeConfig&) const = default;
};

namespace detail {

/// Encoder block: stride-2 residual unit (two 3x3 convs + batch norm + leaky
/// activations, 1x1 projection shortcut).
struct EncBlock {
    EncBlock(const std::string& name, int in_ch, int out_ch, double slope);
    nn::Tensor forward(const nn::Tensor& x, bool train);
    nn::Tensor backward(const nn::Tensor& dy);
    void collect_params(std::vector<nn::Param*>& out);
    void collect_state(std::vector<std::pair<std::string, std::vector<double>*>>& out,
                       const std::string& prefix);

    nn::Conv2d conv1, conv2, proj;
    nn::BatchNorm2d bn1, bn2, bnp;
    nn::LeakyReLU act1, act_out;
};

/// Decoder block: bilinear 2x upsample followed by the mirrored residual unit.
struct DecBlock {
    DecBlock(const std::string& name, int in_ch, int out_ch, double slope);
    nn::Tensor forward(const nn::Tensor& x, bool train);
    nn::Tensor backward(const nn::Tensor& dy);
    void collect_params(std::vector<nn::Param*>& out);
    void collect_state(std::vector<std::pair<std::string, std::vector<double>*>>& out,
                       const std::string& prefix);

    nn::UpsampleBilinear2x up;
    nn::Conv2d conv1, conv2, proj;
    nn::BatchNorm2d bn1, bn2, bnp;
    nn::LeakyReLU act1, act_out;
    bool use_proj = true;  // identity shortcut when channel counts already match
};

}  // namespace detail

/// Residual variational autoencoder. Encoder blocks halve the spatial extent,
/// decoder blocks double it; the latent head pools the last encoder stage
/// into (mu, log-variance). Inference decodes from the mean (eps = 0).
class ResVae {
public:
    explicit ResVae(ResVaeConfig cfg);

    void init(std::uint64_t seed);

    struct ForwardResult {
        nn::Tensor recon;    // (N,1,H,W), sigmoid-bounded
        nn::Tensor mu;       // (N,D,1,1)
        nn::Tensor logvar;   // (N,D,1,1)
        nn::Tensor z;        // (N,D,1,1)
    };

    /// eps: optional (N,D,1,1) standard-normal draws; nullptr decodes from mu.
    ForwardResult forward(const nn::Tensor& x, const nn::Tensor* eps, bool train);

    /// Backpropagates loss gradients (w.r.t. recon, mu, logvar — the latter
    /// two carry the KL path) into the parameter grad accumulators.
    void backward(const nn::Tensor& d_recon, const nn::Tensor& d_mu,
                  const nn::Tensor& d_logvar);

    // Slice-level contract operations (evaluation mode, pure).
    LatentDistribution encode(const Slice2D& s);
    Slice2D decode(const std::vector<double>& z, const std::string& case_id = "decoded",
                   int slice_index = 0);
    Slice2D reconstruct(const Slice2D& s);

    std::vector<nn::Param*> params();
    std::vector<std::pair<std::string, std::vector<double>*>> state_arrays();
    const ResVaeConfig& config() const { return cfg_; }

    CheckpointPayload to_checkpoint(const std::string& config_hash) const;
    static ResVae from_checkpoint(const CheckpointPayload& p);

private:
    ResVaeConfig cfg_;
    std::vector<detail::EncBlock> enc_;
    nn::GlobalAvgPool pool_;
    nn::Linear head_mu_, head_logvar_;
    nn::Linear dec_in_;
    std::vector<detail::DecBlock> dec_;
    nn::Conv2d out_conv_;
    nn::Sigmoid out_act_;
    nn::Tensor eps_cached_, sigma_cached_;
};

/// Loud mismatch check used when loading checkpoints against a run config.
void require_matching_config(const ResVaeConfig& expected, const ResVaeConfig& loaded);

ResVaeConfig resvae_config_from_json(const nlohmann::json& j);
nlohmann::json resvae_config_to_json(const ResVaeConfig& cfg);

}  // namespace uad
