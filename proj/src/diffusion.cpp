#include "uad/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "uad/errors.hpp"
#include "uad/rng.hpp"

namespace uad {

DiffusionSchedule DiffusionSchedule::linear(int T, double beta_start, double beta_end) {
    if (T < 1) throw ValidationError("diffusion T must be >= 1");
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end) {
        throw ValidationError("betas must satisfy 0 < beta_start <= beta_end < 1");
    }
    DiffusionSchedule s;
    s.T = T;
    s.beta.resize(T);
    for (int i = 0; i < T; ++i) {
        const double f = T == 1 ? 0.0 : static_cast<double>(i) / (T - 1);
        s.beta[i] = beta_start + (beta_end - beta_start) * f;
    }
    s.alpha_bar.resize(T + 1);
    s.alpha_bar[0] = 1.0;
    for (int t = 1; t <= T; ++t) s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - s.beta[t - 1]);
    s.validate();
    return s;
}

void DiffusionSchedule::validate() const {
    if (T < 1) throw ValidationError("diffusion T must be >= 1");
    if (static_cast<int>(beta.size()) != T) throw ValidationError("beta must have T entries");
    if (static_cast<int>(alpha_bar.size()) != T + 1) {
        throw ValidationError("alpha_bar must have T+1 entries");
    }
    for (int i = 0; i < T; ++i) {
        if (!(beta[i] > 0.0) || !(beta[i] < 1.0)) {
            throw ValidationError("beta values must lie in (0,1)");
        }
        if (i > 0 && beta[i] < beta[i - 1]) throw ValidationError("beta must be nondecreasing");
    }
    if (alpha_bar[0] != 1.0) throw ValidationError("alpha_bar[0] must equal 1");
    for (int t = 1; t <= T; ++t) {
        if (!(alpha_bar[t] > 0.0 && alpha_bar[t] < alpha_bar[t - 1])) {
            throw ValidationError("alpha_bar must be strictly decreasing in (0,1)");
        }
    }
}

void DdpmConfig::validate() const {
    if (channels.size() < 2) throw ValidationError("ddpm needs at least two channel levels");
    for (std::size_t i = 0; i < channels.size(); ++i) {
        if (channels[i] < 1) throw ValidationError("ddpm channels must be positive");
    }
    if (time_embed_dim < 2 || time_embed_dim % 2 != 0) {
        throw ValidationError("time_embed_dim must be even and >= 2");
    }
    if (negative_slope < 0.0 || negative_slope >= 1.0) {
        throw ValidationError("negative_slope must be in [0, 1)");
    }
    const int divisor = 1 << (levels() - 1);
    if (image_size < divisor || image_size % divisor != 0) {
        throw ValidationError("ddpm image_size " + std::to_string(image_size) +
                              " is not divisible by 2^(levels-1) = " + std::to_string(divisor));
    }
}

std::vector<double> sinusoidal_embedding(int t, int dim) {
    if (dim < 2 || dim % 2 != 0) throw ValidationError("embedding dim must be even and >= 2");
    const int half = dim / 2;
    std::vector<double> e(dim);
    for (int i = 0; i < half; ++i) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / half);
        e[i] = std::sin(t * freq);
        e[half + i] = std::cos(t * freq);
    }
    return e;
}

namespace detail {

TimeBias::TimeBias(const std::string& name, int embed_dim, int channels)
    : lin(name, embed_dim, channels) {}

nn::Tensor TimeBias::forward(const nn::Tensor& x, const nn::Tensor& temb) {
    const nn::Tensor b = lin.forward(temb);
    nn::Tensor y = x;
    for (int n = 0; n < y.n; ++n) {
        for (int c = 0; c < y.c; ++c) {
            const double add = b.v[static_cast<std::size_t>(n) * y.c + c];
            double* p = y.v.data() + y.index(n, c, 0, 0);
            for (std::size_t i = 0; i < y.plane(); ++i) p[i] += add;
        }
    }
    return y;
}

nn::Tensor TimeBias::backward(const nn::Tensor& dy) {
    nn::Tensor db(dy.n, dy.c, 1, 1);
    for (int n = 0; n < dy.n; ++n) {
        for (int c = 0; c < dy.c; ++c) {
            const double* p = dy.v.data() + dy.index(n, c, 0, 0);
            double s = 0.0;
            for (std::size_t i = 0; i < dy.plane(); ++i) s += p[i];
            db.v[static_cast<std::size_t>(n) * dy.c + c] = s;
        }
    }
    (void)lin.backward(db);  // the embedding itself has no trainable ancestors
    return dy;
}

}  // namespace detail

DdpmUNet::DdpmUNet(DdpmConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const int L = cfg_.levels();
    const double slope = cfg_.negative_slope;
    stem_ = nn::Conv2d("stem", 1, cfg_.channels[0], 3, 1);
    stem_act_ = nn::LeakyReLU(slope);
    for (int l = 0; l + 1 < L; ++l) {
        detail::DdpmDown d;
        const std::string name = "down" + std::to_string(l);
        d.conv = nn::Conv2d(name + ".conv", cfg_.channels[l], cfg_.channels[l + 1], 3, 2);
        d.tb = detail::TimeBias(name + ".time", cfg_.time_embed_dim, cfg_.channels[l + 1]);
        d.refine = nn::Conv2d(name + ".refine", cfg_.channels[l + 1], cfg_.channels[l + 1], 3, 1);
        d.act1 = nn::LeakyReLU(slope);
        d.act2 = nn::LeakyReLU(slope);
        downs_.push_back(std::move(d));
    }
    mid_ = nn::Conv2d("mid.conv", cfg_.channels[L - 1], cfg_.channels[L - 1], 3, 1);
    mid_tb_ = detail::TimeBias("mid.time", cfg_.time_embed_dim, cfg_.channels[L - 1]);
    mid_act_ = nn::LeakyReLU(slope);
    for (int k = 0; k + 1 < L; ++k) {
        const int c_in = cfg_.channels[L - 1 - k];
        const int c_skip = cfg_.channels[L - 2 - k];
        detail::DdpmUp u;
        const std::string name = "up" + std::to_string(k);
        u.fuse = nn::Conv2d(name + ".fuse", c_in + c_skip, c_skip, 3, 1);
        u.tb = detail::TimeBias(name + ".time", cfg_.time_embed_dim, c_skip);
        u.refine = nn::Conv2d(name + ".refine", c_skip, c_skip, 3, 1);
        u.act1 = nn::LeakyReLU(slope);
        u.act2 = nn::LeakyReLU(slope);
        ups_.push_back(std::move(u));
    }
    head_ = nn::Conv2d("head", cfg_.channels[0], 1, 3, 1);
    skip_channels_.resize(L - 1);
    for (int l = 0; l + 1 < L; ++l) skip_channels_[l] = cfg_.channels[l];
}

void DdpmUNet::init(std::uint64_t seed) {
    auto conv_init = [&](nn::Conv2d& c) {
        RandomStream rs(fanout_seed(seed, c.weight.name));
        c.init(rs);
    };
    auto linear_init = [&](nn::Linear& l) {
        RandomStream rs(fanout_seed(seed, l.weight.name));
        l.init(rs);
    };
    conv_init(stem_);
    for (auto& d : downs_) {
        conv_init(d.conv);
        linear_init(d.tb.lin);
        conv_init(d.refine);
    }
    conv_init(mid_);
    linear_init(mid_tb_.lin);
    for (auto& u : ups_) {
        conv_init(u.fuse);
        linear_init(u.tb.lin);
        conv_init(u.refine);
    }
    conv_init(head_);
    // Zero head: the untrained model predicts zero noise, so its loss on
    // unit-normal targets starts at the analytic baseline of 1.
    std::fill(head_.weight.w.begin(), head_.weight.w.end(), 0.0);
    std::fill(head_.bias.w.begin(), head_.bias.w.end(), 0.0);
}

nn::Tensor DdpmUNet::forward(const nn::Tensor& x, const std::vector<int>& t) {
    if (x.c != 1 || x.h != cfg_.image_size || x.w != cfg_.image_size) {
        throw ValidationError("ddpm input must be (N,1," + std::to_string(cfg_.image_size) +
                              "," + std::to_string(cfg_.image_size) + ")");
    }
    if (static_cast<int>(t.size()) != x.n) {
        throw ValidationError("one timestep per batch entry is required");
    }
    nn::Tensor temb(x.n, cfg_.time_embed_dim, 1, 1);
    for (int n = 0; n < x.n; ++n) {
        if (t[n] < 0) throw ValidationError("timesteps must be nonnegative");
        const std::vector<double> e = sinusoidal_embedding(t[n], cfg_.time_embed_dim);
        std::copy(e.begin(), e.end(),
                  temb.v.begin() + static_cast<std::size_t>(n) * cfg_.time_embed_dim);
    }

    const int L = cfg_.levels();
    skip_cache_.assign(L - 1, nn::Tensor());
    nn::Tensor h = stem_act_.forward(stem_.forward(x));
    skip_cache_[0] = h;
    for (int l = 0; l + 1 < L; ++l) {
        auto& d = downs_[l];
        h = d.act1.forward(d.tb.forward(d.conv.forward(h), temb));
        h = d.act2.forward(d.refine.forward(h));
        if (l + 2 < L) skip_cache_[l + 1] = h;
    }
    h = mid_act_.forward(mid_tb_.forward(mid_.forward(h), temb));
    for (int k = 0; k + 1 < L; ++k) {
        auto& u = ups_[k];
        h = nn::concat_channels(u.up.forward(h), skip_cache_[L - 2 - k]);
        h = u.act1.forward(u.tb.forward(u.fuse.forward(h), temb));
        h = u.act2.forward(u.refine.forward(h));
    }
    return head_.forward(h);
}

nn::Tensor DdpmUNet::backward(const nn::Tensor& d_out) {
    const int L = cfg_.levels();
    std::vector<nn::Tensor> skip_grad(L - 1);
    nn::Tensor d = head_.backward(d_out);
    for (int k = L - 2; k >= 0; --k) {
        auto& u = ups_[k];
        d = u.fuse.backward(u.tb.backward(u.act1.backward(u.refine.backward(
            u.act2.backward(d)))));
        nn::Tensor d_h, d_s;
        nn::split_channels(d, cfg_.channels[L - 1 - k], d_h, d_s);
        skip_grad[L - 2 - k] = std::move(d_s);
        d = u.up.backward(d_h);
    }
    d = mid_.backward(mid_tb_.backward(mid_act_.backward(d)));
    for (int l = L - 2; l >= 0; --l) {
        if (l + 2 < L) {
            for (std::size_t i = 0; i < d.size(); ++i) d.v[i] += skip_grad[l + 1].v[i];
        }
        auto& dn = downs_[l];
        d = dn.conv.backward(dn.tb.backward(dn.act1.backward(dn.refine.backward(
            dn.act2.backward(d)))));
    }
    for (std::size_t i = 0; i < d.size(); ++i) d.v[i] += skip_grad[0].v[i];
    return stem_.backward(stem_act_.backward(d));
}

std::vector<nn::Param*> DdpmUNet::params() {
    std::vector<nn::Param*> out;
    stem_.collect_params(out);
    for (auto& d : downs_) {
        d.conv.collect_params(out);
        d.tb.lin.collect_params(out);
        d.refine.collect_params(out);
    }
    mid_.collect_params(out);
    mid_tb_.lin.collect_params(out);
    for (auto& u : ups_) {
        u.fuse.collect_params(out);
        u.tb.lin.collect_params(out);
        u.refine.collect_params(out);
    }
    head_.collect_params(out);
    return out;
}

nlohmann::json ddpm_config_to_json(const DdpmConfig& cfg) {
    return {{"channels", cfg.channels},
            {"time_embed_dim", cfg.time_embed_dim},
            {"image_size", cfg.image_size},
            {"negative_slope", cfg.negative_slope}};
}

DdpmConfig ddpm_config_from_json(const nlohmann::json& j) {
    DdpmConfig cfg;
    cfg.channels = j.at("channels").get<std::vector<int>>();
    cfg.time_embed_dim = j.at("time_embed_dim").get<int>();
    cfg.image_size = j.at("image_size").get<int>();
    cfg.negative_slope = j.at("negative_slope").get<double>();
    cfg.validate();
    return cfg;
}

CheckpointPayload DdpmUNet::to_checkpoint(const std::string& config_hash) const {
    CheckpointPayload p;
    p.kind = "ddpm";
    p.config = ddpm_config_to_json(cfg_);
    p.config_hash = config_hash;
    auto* self = const_cast<DdpmUNet*>(this);
    for (const nn::Param* prm : self->params()) p.arrays.emplace_back(prm->name, prm->w);
    return p;
}

DdpmUNet DdpmUNet::from_checkpoint(const CheckpointPayload& p) {
    if (p.kind != "ddpm") {
        throw ValidationError("checkpoint holds a '" + p.kind + "' model, expected 'ddpm'");
    }
    DdpmUNet model(ddpm_config_from_json(p.config));
    std::vector<nn::Param*> slots = model.params();
    if (slots.size() != p.arrays.size()) {
        throw ValidationError("checkpoint array count mismatch: expected " +
                              std::to_string(slots.size()) + ", found " +
                              std::to_string(p.arrays.size()));
    }
    for (std::size_t i = 0; i < slots.size(); ++i) {
        const auto& [name, values] = p.arrays[i];
        if (name != slots[i]->name || values.size() != slots[i]->w.size()) {
            throw ValidationError("checkpoint array '" + name + "' does not match model slot '" +
                                  slots[i]->name + "'");
        }
        slots[i]->w = values;
    }
    return model;
}

void DdpmTrainConfig::validate() const {
    arch.validate();
    if (steps < 1) throw ValidationError("ddpm steps must be positive");
    if (batch_size < 1) throw ValidationError("ddpm batch_size must be positive");
    if (val_batch < 1) throw ValidationError("ddpm val_batch must be positive");
    if (!(learning_rate > 0.0)) throw ValidationError("ddpm learning_rate must be positive");
    if (weight_decay < 0.0) throw ValidationError("ddpm weight_decay must be nonnegative");
}

Grid2D forward_noise(const Grid2D& x0, int t, const Grid2D& eps,
                     const DiffusionSchedule& schedule) {
    if (!x0.same_shape(eps)) throw ValidationError("noise grid shape mismatch");
    if (t < 0 || t > schedule.T) throw ValidationError("timestep out of range");
    const double ab = schedule.alpha_bar[t];
    const double s = std::sqrt(ab);
    const double q = std::sqrt(1.0 - ab);
    Grid2D out(x0.w, x0.h);
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = s * x0.v[i] + q * eps.v[i];
    return out;
}

namespace {

struct ValBatch {
    nn::Tensor x_t;              // noised inputs
    nn::Tensor eps;              // targets
    std::vector<int> timesteps;
};

double noise_prediction_loss(DdpmUNet& model, const ValBatch& vb) {
    const nn::Tensor pred = model.forward(vb.x_t, vb.timesteps);
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred.v[i] - vb.eps.v[i];
        s += d * d;
    }
    return s / static_cast<double>(pred.size());
}

}  // namespace

DdpmTrainResult ddpm_train(const std::vector<Slice2D>& slices,
                           const DiffusionSchedule& schedule, const DdpmTrainConfig& cfg,
                           std::ostream* log) {
    cfg.validate();
    schedule.validate();
    if (slices.empty()) throw DataError("ddpm training set is empty");
    const int S = cfg.arch.image_size;
    for (const Slice2D& s : slices) {
        s.validate(S);
        for (double p : s.pixels.v) {
            if (p < 0.0 || p > 1.0) {
                throw DataError("ddpm training pixels must lie in [0,1] (case " + s.case_id +
                                ")");
            }
        }
    }

    DdpmTrainResult result{DdpmUNet(cfg.arch)};
    result.model.init(fanout_seed(cfg.seed, "ddpm-init"));

    const int n = static_cast<int>(slices.size());
    const std::size_t plane = static_cast<std::size_t>(S) * S;

    // Freeze the validation batch (inputs, timesteps, and noise draws) so the
    // initial and final losses measure the same quantity.
    RandomStream val_rs(fanout_seed(cfg.seed, "ddpm-val"));
    ValBatch vb;
    const int vn = std::min(cfg.val_batch, n);
    vb.x_t = nn::Tensor(vn, 1, S, S);
    vb.eps = nn::Tensor(vn, 1, S, S);
    vb.timesteps.resize(vn);
    for (int i = 0; i < vn; ++i) {
        const Grid2D& x0 = slices[i].pixels;
        const int t = 1 + static_cast<int>(val_rs.below(schedule.T));
        vb.timesteps[i] = t;
        const double sa = std::sqrt(schedule.alpha_bar[t]);
        const double sq = std::sqrt(1.0 - schedule.alpha_bar[t]);
        for (std::size_t p = 0; p < plane; ++p) {
            const double e = val_rs.normal();
            vb.eps.v[i * plane + p] = e;
            vb.x_t.v[i * plane + p] = sa * x0.v[p] + sq * e;
        }
    }
    result.initial_val_loss = noise_prediction_loss(result.model, vb);

    std::vector<nn::Param*> params = result.model.params();
    nn::AdamW::Options opt_cfg;
    opt_cfg.lr = cfg.learning_rate;
    opt_cfg.weight_decay = cfg.weight_decay;
    nn::AdamW opt(params, opt_cfg);

    RandomStream rs(fanout_seed(cfg.seed, "ddpm-train"));
    const int bs = std::min(cfg.batch_size, n);
    nn::Tensor x_t(bs, 1, S, S);
    nn::Tensor eps(bs, 1, S, S);
    std::vector<int> timesteps(bs);
    for (int step = 0; step < cfg.steps; ++step) {
        for (int i = 0; i < bs; ++i) {
            const Grid2D& x0 = slices[rs.below(n)].pixels;
            const int t = 1 + static_cast<int>(rs.below(schedule.T));
            timesteps[i] = t;
            const double sa = std::sqrt(schedule.alpha_bar[t]);
            const double sq = std::sqrt(1.0 - schedule.alpha_bar[t]);
            for (std::size_t p = 0; p < plane; ++p) {
                const double e = rs.normal();
                eps.v[i * plane + p] = e;
                x_t.v[i * plane + p] = sa * x0.v[p] + sq * e;
            }
        }
        const nn::Tensor pred = result.model.forward(x_t, timesteps);
        double loss = 0.0;
        nn::Tensor d_pred(bs, 1, S, S);
        const double inv = 1.0 / static_cast<double>(pred.size());
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const double d = pred.v[i] - eps.v[i];
            loss += d * d * inv;
            d_pred.v[i] = 2.0 * d * inv;
        }
        if (!std::isfinite(loss)) {
            throw DataError("non-finite diffusion loss at step " + std::to_string(step));
        }
        opt.zero_grad();
        result.model.backward(d_pred);
        opt.step();
        result.step_losses.push_back(loss);
        if (log) {
            *log << nlohmann::json({{"step", step}, {"loss", loss}}).dump() << "\n";
        }
    }
    result.final_val_loss = noise_prediction_loss(result.model, vb);
    return result;
}

std::vector<Slice2D> ddpm_sample(DdpmUNet& model, const DiffusionSchedule& schedule, int n,
                                 std::uint64_t seed) {
    schedule.validate();
    if (n < 1) throw ValidationError("sample count must be >= 1");
    const int S = model.config().image_size;
    const std::size_t plane = static_cast<std::size_t>(S) * S;
    std::vector<Slice2D> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        RandomStream rs(fanout_seed(seed, "ddpm-sample", i));
        nn::Tensor x(1, 1, S, S);
        for (double& v : x.v) v = rs.normal();
        for (int t = schedule.T; t >= 1; --t) {
            const nn::Tensor pred = model.forward(x, {t});
            const double beta = schedule.beta[t - 1];
            const double alpha = 1.0 - beta;
            const double coef = beta / std::sqrt(1.0 - schedule.alpha_bar[t]);
            const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
            const double sigma = t > 1 ? std::sqrt(beta) : 0.0;
            for (std::size_t p = 0; p < plane; ++p) {
                double v = inv_sqrt_alpha * (x.v[p] - coef * pred.v[p]);
                if (sigma > 0.0) v += sigma * rs.normal();
                x.v[p] = v;
            }
        }
        Grid2D g(S, S);
        for (std::size_t p = 0; p < plane; ++p) g.v[p] = std::clamp(x.v[p], 0.0, 1.0);
        out.emplace_back(std::move(g), "synth-s" + std::to_string(seed) + "-" + std::to_string(i),
                         i);
    }
    return out;
}

FilterResult memorization_filter(const std::vector<Slice2D>& samples,
                                 const std::vector<Slice2D>& real, double threshold,
                                 const SsimConfig& cfg) {
    if (samples.empty()) throw DataError("memorization filter: sample set is empty");
    if (real.empty()) throw DataError("memorization filter: real set is empty");
    FilterResult out;
    for (const Slice2D& s : samples) {
        FilterRecord rec;
        rec.sample_id = s.case_id;
        rec.max_ssim = -2.0;
        for (const Slice2D& r : real) {
            const double v = ssim(s.pixels, r.pixels, cfg);
            if (v > rec.max_ssim) {
                rec.max_ssim = v;
                rec.nearest_real_id = r.case_id + "#" + std::to_string(r.slice_index);
            }
        }
        rec.kept = !(rec.max_ssim > threshold);
        if (rec.kept) {
            out.kept.push_back(s);
        } else {
            out.rejected.push_back(s);
        }
        out.report.push_back(std::move(rec));
    }
    return out;
}

}  // namespace uad
