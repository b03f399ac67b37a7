#include "uad/resvae.hpp"

#include <cmath>

#include "uad/errors.hpp"

namespace uad {

void ResVaeConfig::validate() const {
    if (channels.empty()) throw ValidationError("resvae channels must be nonempty");
    for (std::size_t i = 0; i < channels.size(); ++i) {
        if (channels[i] < 1) throw ValidationError("resvae channels must be positive");
        if (i > 0 && channels[i] <= channels[i - 1]) {
            throw ValidationError("resvae channels must be strictly increasing");
        }
    }
    if (latent_dim < 1) throw ValidationError("latent_dim must be >= 1");
    if (negative_slope < 0.0 || negative_slope >= 1.0) {
        throw ValidationError("negative_slope must be in [0, 1)");
    }
    if (upsample_mode != "bilinear") {
        throw ValidationError("upsample_mode must be 'bilinear' (got '" + upsample_mode + "')");
    }
    const int divisor = 1 << blocks();
    if (input_size < divisor || input_size % divisor != 0) {
        throw ValidationError("input_size " + std::to_string(input_size) +
                              " is not divisible by 2^blocks = " + std::to_string(divisor));
    }
}

namespace detail {

EncBlock::EncBlock(const std::string& name, int in_ch, int out_ch, double slope)
    : conv1(name + ".conv1", in_ch, out_ch, 3, 2),
      conv2(name + ".conv2", out_ch, out_ch, 3, 1),
      proj(name + ".proj", in_ch, out_ch, 1, 2, 0),
      bn1(name + ".bn1", out_ch),
      bn2(name + ".bn2", out_ch),
      bnp(name + ".bnp", out_ch),
      act1(slope),
      act_out(slope) {}

nn::Tensor EncBlock::forward(const nn::Tensor& x, bool train) {
    nn::Tensor h = act1.forward(bn1.forward(conv1.forward(x), train));
    h = bn2.forward(conv2.forward(h), train);
    const nn::Tensor s = bnp.forward(proj.forward(x), train);
    for (std::size_t i = 0; i < h.size(); ++i) h.v[i] += s.v[i];
    return act_out.forward(h);
}

nn::Tensor EncBlock::backward(const nn::Tensor& dy) {
    const nn::Tensor d = act_out.backward(dy);
    nn::Tensor dx = proj.backward(bnp.backward(d));
    const nn::Tensor dm = conv1.backward(bn1.backward(act1.backward(conv2.backward(
        bn2.backward(d)))));
    for (std::size_t i = 0; i < dx.size(); ++i) dx.v[i] += dm.v[i];
    return dx;
}

void EncBlock::collect_params(std::vector<nn::Param*>& out) {
    conv1.collect_params(out);
    bn1.collect_params(out);
    conv2.collect_params(out);
    bn2.collect_params(out);
    proj.collect_params(out);
    bnp.collect_params(out);
}

void EncBlock::collect_state(std::vector<std::pair<std::string, std::vector<double>*>>& out,
                             const std::string& prefix) {
    out.emplace_back(prefix + ".bn1.running_mean", &bn1.running_mean);
    out.emplace_back(prefix + ".bn1.running_var", &bn1.running_var);
    out.emplace_back(prefix + ".bn2.running_mean", &bn2.running_mean);
    out.emplace_back(prefix + ".bn2.running_var", &bn2.running_var);
    out.emplace_back(prefix + ".bnp.running_mean", &bnp.running_mean);
    out.emplace_back(prefix + ".bnp.running_var", &bnp.running_var);
}

DecBlock::DecBlock(const std::string& name, int in_ch, int out_ch, double slope)
    : conv1(name + ".conv1", in_ch, out_ch, 3, 1),
      conv2(name + ".conv2", out_ch, out_ch, 3, 1),
      proj(name + ".proj", in_ch, out_ch, 1, 1, 0),
      bn1(name + ".bn1", out_ch),
      bn2(name + ".bn2", out_ch),
      bnp(name + ".bnp", out_ch),
      act1(slope),
      act_out(slope),
      use_proj(in_ch != out_ch) {}

nn::Tensor DecBlock::forward(const nn::Tensor& x, bool train) {
    const nn::Tensor u = up.forward(x);
    nn::Tensor h = act1.forward(bn1.forward(conv1.forward(u), train));
    h = bn2.forward(conv2.forward(h), train);
    const nn::Tensor s = use_proj ? bnp.forward(proj.forward(u), train) : u;
    for (std::size_t i = 0; i < h.size(); ++i) h.v[i] += s.v[i];
    return act_out.forward(h);
}

nn::Tensor DecBlock::backward(const nn::Tensor& dy) {
    const nn::Tensor d = act_out.backward(dy);
    nn::Tensor du = use_proj ? proj.backward(bnp.backward(d)) : d;
    const nn::Tensor dm = conv1.backward(bn1.backward(act1.backward(conv2.backward(
        bn2.backward(d)))));
    for (std::size_t i = 0; i < du.size(); ++i) du.v[i] += dm.v[i];
    return up.backward(du);
}

void DecBlock::collect_params(std::vector<nn::Param*>& out) {
    conv1.collect_params(out);
    bn1.collect_params(out);
    conv2.collect_params(out);
    bn2.collect_params(out);
    if (use_proj) {
        proj.collect_params(out);
        bnp.collect_params(out);
    }
}

void DecBlock::collect_state(std::vector<std::pair<std::string, std::vector<double>*>>& out,
                             const std::string& prefix) {
    out.emplace_back(prefix + ".bn1.running_mean", &bn1.running_mean);
    out.emplace_back(prefix + ".bn1.running_var", &bn1.running_var);
    out.emplace_back(prefix + ".bn2.running_mean", &bn2.running_mean);
    out.emplace_back(prefix + ".bn2.running_var", &bn2.running_var);
    if (use_proj) {
        out.emplace_back(prefix + ".bnp.running_mean", &bnp.running_mean);
        out.emplace_back(prefix + ".bnp.running_var", &bnp.running_var);
    }
}

}  // namespace detail

ResVae::ResVae(ResVaeConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    int in_ch = 1;
    for (int b = 0; b < cfg_.blocks(); ++b) {
        enc_.emplace_back("enc" + std::to_string(b), in_ch, cfg_.channels[b],
                          cfg_.negative_slope);
        in_ch = cfg_.channels[b];
    }
    const int c_last = cfg_.channels.back();
    const int bsz = cfg_.bottleneck();
    head_mu_ = nn::Linear("head_mu", c_last, cfg_.latent_dim);
    head_logvar_ = nn::Linear("head_logvar", c_last, cfg_.latent_dim);
    dec_in_ = nn::Linear("dec_in", cfg_.latent_dim, c_last * bsz * bsz);
    for (int b = cfg_.blocks() - 1; b >= 1; --b) {
        dec_.emplace_back("dec" + std::to_string(b), cfg_.channels[b], cfg_.channels[b - 1],
                          cfg_.negative_slope);
    }
    dec_.emplace_back("dec0", cfg_.channels[0], cfg_.channels[0], cfg_.negative_slope);
    out_conv_ = nn::Conv2d("out_conv", cfg_.channels[0], 1, 3, 1);
}

void ResVae::init(std::uint64_t seed) {
    // Each layer draws from its own named stream so initialization does not
    // depend on traversal order.
    auto conv_init = [&](nn::Conv2d& c) {
        RandomStream rs(fanout_seed(seed, c.weight.name));
        c.init(rs);
    };
    auto linear_init = [&](nn::Linear& l) {
        RandomStream rs(fanout_seed(seed, l.weight.name));
        l.init(rs);
    };
    for (auto& b : enc_) {
        conv_init(b.conv1);
        conv_init(b.conv2);
        conv_init(b.proj);
    }
    for (auto& b : dec_) {
        conv_init(b.conv1);
        conv_init(b.conv2);
        if (b.use_proj) conv_init(b.proj);
    }
    linear_init(head_mu_);
    linear_init(head_logvar_);
    linear_init(dec_in_);
    conv_init(out_conv_);
}

ResVae::ForwardResult ResVae::forward(const nn::Tensor& x, const nn::Tensor* eps, bool train) {
    if (x.c != 1 || x.h != cfg_.input_size || x.w != cfg_.input_size) {
        throw ValidationError("resvae input must be (N,1," + std::to_string(cfg_.input_size) +
                              "," + std::to_string(cfg_.input_size) + "); got (" +
                              std::to_string(x.n) + "," + std::to_string(x.c) + "," +
                              std::to_string(x.h) + "," + std::to_string(x.w) + ")");
    }
    nn::Tensor h = x;
    for (auto& b : enc_) h = b.forward(h, train);
    const nn::Tensor pooled = pool_.forward(h);

    ForwardResult r;
    r.mu = head_mu_.forward(pooled);
    r.logvar = head_logvar_.forward(pooled);

    const int d = cfg_.latent_dim;
    sigma_cached_ = nn::Tensor(x.n, d, 1, 1);
    eps_cached_ = nn::Tensor(x.n, d, 1, 1);
    if (eps) {
        if (eps->n != x.n || eps->c != d) throw ValidationError("eps shape mismatch");
        eps_cached_ = *eps;
    }
    r.z = nn::Tensor(x.n, d, 1, 1);
    for (std::size_t i = 0; i < r.z.size(); ++i) {
        sigma_cached_.v[i] = std::exp(0.5 * r.logvar.v[i]);
        r.z.v[i] = r.mu.v[i] + sigma_cached_.v[i] * eps_cached_.v[i];
    }

    const int bsz = cfg_.bottleneck();
    nn::Tensor dh = dec_in_.forward(r.z);
    dh.c = cfg_.channels.back();
    dh.h = bsz;
    dh.w = bsz;
    for (auto& b : dec_) dh = b.forward(dh, train);
    r.recon = out_act_.forward(out_conv_.forward(dh));

    for (double v : r.recon.v) {
        if (!std::isfinite(v)) throw DataError("non-finite activation in the decoder output");
    }
    for (std::size_t i = 0; i < r.mu.size(); ++i) {
        if (!std::isfinite(r.mu.v[i]) || !std::isfinite(r.logvar.v[i])) {
            throw DataError("non-finite activation in the latent head");
        }
    }
    return r;
}

void ResVae::backward(const nn::Tensor& d_recon, const nn::Tensor& d_mu,
                      const nn::Tensor& d_logvar) {
    nn::Tensor d = out_conv_.backward(out_act_.backward(d_recon));
    for (auto it = dec_.rbegin(); it != dec_.rend(); ++it) d = it->backward(d);
    d.c = d.c * d.h * d.w;  // flatten back to the linear head's view
    d.h = 1;
    d.w = 1;
    nn::Tensor dz = dec_in_.backward(d);

    // z = mu + exp(0.5*logvar) * eps
    nn::Tensor dmu = d_mu;
    nn::Tensor dlv = d_logvar;
    for (std::size_t i = 0; i < dz.size(); ++i) {
        dmu.v[i] += dz.v[i];
        dlv.v[i] += dz.v[i] * eps_cached_.v[i] * 0.5 * sigma_cached_.v[i];
    }
    nn::Tensor dpool = head_mu_.backward(dmu);
    const nn::Tensor dpool2 = head_logvar_.backward(dlv);
    for (std::size_t i = 0; i < dpool.size(); ++i) dpool.v[i] += dpool2.v[i];
    nn::Tensor dh = pool_.backward(dpool);
    for (auto it = enc_.rbegin(); it != enc_.rend(); ++it) dh = it->backward(dh);
}

LatentDistribution ResVae::encode(const Slice2D& s) {
    s.validate(cfg_.input_size);
    nn::Tensor x(1, 1, s.pixels.h, s.pixels.w);
    x.v = s.pixels.v;
    nn::Tensor h = x;
    for (auto& b : enc_) h = b.forward(h, false);
    const nn::Tensor pooled = pool_.forward(h);
    const nn::Tensor mu = head_mu_.forward(pooled);
    const nn::Tensor logvar = head_logvar_.forward(pooled);
    LatentDistribution d;
    d.mu = mu.v;
    d.sigma.resize(logvar.size());
    for (std::size_t i = 0; i < d.sigma.size(); ++i) d.sigma[i] = std::exp(0.5 * logvar.v[i]);
    d.validate();
    return d;
}

Slice2D ResVae::decode(const std::vector<double>& z, const std::string& case_id,
                       int slice_index) {
    if (static_cast<int>(z.size()) != cfg_.latent_dim) {
        throw ValidationError("latent vector length " + std::to_string(z.size()) +
                              " does not match latent_dim " + std::to_string(cfg_.latent_dim));
    }
    nn::Tensor zt(1, cfg_.latent_dim, 1, 1);
    zt.v = z;
    const int bsz = cfg_.bottleneck();
    nn::Tensor dh = dec_in_.forward(zt);
    dh.c = cfg_.channels.back();
    dh.h = bsz;
    dh.w = bsz;
    for (auto& b : dec_) dh = b.forward(dh, false);
    const nn::Tensor recon = out_act_.forward(out_conv_.forward(dh));
    Grid2D px(recon.w, recon.h);
    px.v = recon.v;
    return Slice2D(std::move(px), case_id, slice_index);
}

Slice2D ResVae::reconstruct(const Slice2D& s) {
    const LatentDistribution d = encode(s);
    return decode(d.mu, s.case_id, s.slice_index);
}

std::vector<nn::Param*> ResVae::params() {
    std::vector<nn::Param*> out;
    for (auto& b : enc_) b.collect_params(out);
    head_mu_.collect_params(out);
    head_logvar_.collect_params(out);
    dec_in_.collect_params(out);
    for (auto& b : dec_) b.collect_params(out);
    out_conv_.collect_params(out);
    return out;
}

std::vector<std::pair<std::string, std::vector<double>*>> ResVae::state_arrays() {
    std::vector<std::pair<std::string, std::vector<double>*>> out;
    for (std::size_t b = 0; b < enc_.size(); ++b) {
        enc_[b].collect_state(out, "enc" + std::to_string(b));
    }
    for (std::size_t b = 0; b < dec_.size(); ++b) {
        dec_[b].collect_state(out, "dec" + std::to_string(dec_.size() - 1 - b));
    }
    return out;
}

nlohmann::json resvae_config_to_json(const ResVaeConfig& cfg) {
    return {{"channels", cfg.channels},
            {"latent_dim", cfg.latent_dim},
            {"negative_slope", cfg.negative_slope},
            {"upsample_mode", cfg.upsample_mode},
            {"input_size", cfg.input_size}};
}

ResVaeConfig resvae_config_from_json(const nlohmann::json& j) {
    ResVaeConfig cfg;
    cfg.channels = j.at("channels").get<std::vector<int>>();
    cfg.latent_dim = j.at("latent_dim").get<int>();
    cfg.negative_slope = j.at("negative_slope").get<double>();
    cfg.upsample_mode = j.at("upsample_mode").get<std::string>();
    cfg.input_size = j.at("input_size").get<int>();
    cfg.validate();
    return cfg;
}

CheckpointPayload ResVae::to_checkpoint(const std::string& config_hash) const {
    CheckpointPayload p;
    p.kind = "resvae";
    p.config = resvae_config_to_json(cfg_);
    p.config_hash = config_hash;
    auto* self = const_cast<ResVae*>(this);
    for (const nn::Param* prm : self->params()) p.arrays.emplace_back(prm->name, prm->w);
    for (const auto& [name, vec] : self->state_arrays()) p.arrays.emplace_back(name, *vec);
    return p;
}

ResVae ResVae::from_checkpoint(const CheckpointPayload& p) {
    if (p.kind != "resvae") {
        throw ValidationError("checkpoint holds a '" + p.kind + "' model, expected 'resvae'");
    }
    ResVae model(resvae_config_from_json(p.config));
    std::vector<std::pair<std::string, std::vector<double>*>> slots;
    for (nn::Param* prm : model.params()) slots.emplace_back(prm->name, &prm->w);
    for (auto& [name, vec] : model.state_arrays()) slots.emplace_back(name, vec);
    if (slots.size() != p.arrays.size()) {
        throw ValidationError("checkpoint array count mismatch: expected " +
                              std::to_string(slots.size()) + ", found " +
                              std::to_string(p.arrays.size()));
    }
    for (std::size_t i = 0; i < slots.size(); ++i) {
        const auto& [name, values] = p.arrays[i];
        if (name != slots[i].first || values.size() != slots[i].second->size()) {
            throw ValidationError("checkpoint array '" + name + "' does not match model slot '" +
                                  slots[i].first + "'");
        }
        *slots[i].second = values;
    }
    return model;
}

void require_matching_config(const ResVaeConfig& expected, const ResVaeConfig& loaded) {
    if (!(expected == loaded)) {
        throw ValidationError(
            "checkpoint model configuration does not match the run configuration; refusing to "
            "decode with mismatched architecture");
    }
}

}  // namespace uad
