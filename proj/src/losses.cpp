#include "uad/losses.hpp"

#include <cmath>
#include <string>

#include "uad/errors.hpp"

namespace uad {

// --------------------------------------------------------------- weights --

void LossWeights::validate() const {
    if (w_ssim < 0.0 || w_perc < 0.0 || beta_start < 0.0 || beta_end < 0.0 ||
        perc_stage_weights[0] < 0.0 || perc_stage_weights[1] < 0.0) {
        throw ValidationError("loss weights must be nonnegative");
    }
    if (beta_start > beta_end) throw ValidationError("beta_start must not exceed beta_end");
    if (anneal_epochs < 1) throw ValidationError("anneal_epochs must be positive");
}

double beta_schedule(int epoch, const LossWeights& w) {
    if (epoch < 0) throw ValidationError("epoch must be nonnegative");
    if (epoch >= w.anneal_epochs) return w.beta_end;
    const double t = static_cast<double>(epoch) / w.anneal_epochs;
    return w.beta_start + (w.beta_end - w.beta_start) * t;
}

// ------------------------------------------------------------ extractors --

std::vector<nn::Tensor> IdentityExtractor::forward(const nn::Tensor& x) {
    return {x, x};
}

nn::Tensor IdentityExtractor::backward(const std::vector<nn::Tensor>& d_stages) {
    nn::Tensor dx = d_stages.at(0);
    const nn::Tensor& d1 = d_stages.at(1);
    for (std::size_t i = 0; i < dx.size(); ++i) dx.v[i] += d1.v[i];
    return dx;
}

RandomConvExtractor::RandomConvExtractor(std::uint64_t seed, int c0, int c1, double slope)
    : conv0("perc.conv0", 1, c0, 3, 2), conv1("perc.conv1", c0, c1, 3, 2),
      act0_(slope), act1_(slope) {
    RandomStream rs(fanout_seed(seed, "perceptual-extractor"));
    conv0.init(rs);
    conv1.init(rs);
}

std::vector<nn::Tensor> RandomConvExtractor::forward(const nn::Tensor& x) {
    nn::Tensor s0 = act0_.forward(conv0.forward(x));
    nn::Tensor s1 = act1_.forward(conv1.forward(s0));
    return {std::move(s0), std::move(s1)};
}

nn::Tensor RandomConvExtractor::backward(const std::vector<nn::Tensor>& d_stages) {
    nn::Tensor d0 = conv1.backward(act1_.backward(d_stages.at(1)));
    for (std::size_t i = 0; i < d0.size(); ++i) d0.v[i] += d_stages.at(0).v[i];
    nn::Tensor dx = conv0.backward(act0_.backward(d0));
    conv0.weight.zero_grad();  // fixed weights: grads are never consumed
    conv0.bias.zero_grad();
    conv1.weight.zero_grad();
    conv1.bias.zero_grad();
    return dx;
}

std::unique_ptr<FeatureExtractor> make_extractor(const std::string& kind, std::uint64_t seed) {
    if (kind == "identity") return std::make_unique<IdentityExtractor>();
    if (kind == "random") return std::make_unique<RandomConvExtractor>(seed);
    throw ValidationError("unknown perceptual extractor kind '" + kind + "'");
}

// ----------------------------------------------------------------- terms --

double mse(const Grid2D& x, const Grid2D& y, Grid2D* dy) {
    if (!x.same_shape(y)) throw ValidationError("mse inputs differ in shape");
    const double inv = 1.0 / static_cast<double>(x.size());
    double acc = 0.0;
    if (dy) *dy = Grid2D(x.w, x.h);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = y.v[i] - x.v[i];
        acc += d * d;
        if (dy) dy->v[i] = 2.0 * d * inv;
    }
    return acc * inv;
}

double kl_divergence(const LatentDistribution& d) {
    d.validate();
    double acc = 0.0;
    for (std::size_t i = 0; i < d.mu.size(); ++i) {
        const double s2 = d.sigma[i] * d.sigma[i];
        acc += d.mu[i] * d.mu[i] + s2 - 1.0 - 2.0 * std::log(d.sigma[i]);
    }
    return 0.5 * acc;
}

double kl_from_mu_logvar(const std::vector<double>& mu, const std::vector<double>& logvar,
                         std::vector<double>* dmu, std::vector<double>* dlogvar) {
    if (mu.size() != logvar.size()) throw ValidationError("kl: mu/logvar length mismatch");
    if (dmu) dmu->assign(mu.size(), 0.0);
    if (dlogvar) dlogvar->assign(mu.size(), 0.0);
    double acc = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        const double s2 = std::exp(logvar[i]);
        acc += mu[i] * mu[i] + s2 - 1.0 - logvar[i];
        if (dmu) (*dmu)[i] = mu[i];
        if (dlogvar) (*dlogvar)[i] = 0.5 * (s2 - 1.0);
    }
    return 0.5 * acc;
}

double ssim_loss(const Grid2D& x, const Grid2D& y, const SsimConfig& cfg, Grid2D* dy) {
    Grid2D g;
    const double s = ssim(x, y, cfg, dy ? &g : nullptr);
    if (dy) {
        *dy = std::move(g);
        for (double& v : dy->v) v = -v;
    }
    return 1.0 - s;
}

namespace {

nn::Tensor replicate_channels(const Grid2D& g, int channels) {
    nn::Tensor t(1, channels, g.h, g.w);
    for (int c = 0; c < channels; ++c) {
        std::copy(g.v.begin(), g.v.end(), t.v.begin() + static_cast<std::ptrdiff_t>(c) * g.size());
    }
    return t;
}

// Stage-weighted feature distance on tensors; d_y gets the extractor-input
// gradient when requested. forward(x) runs first so the extractor's caches
// hold y at backward time.
double perceptual_tensor(const nn::Tensor& x, const nn::Tensor& y, FeatureExtractor& ex,
                         const std::array<double, 2>& sw, nn::Tensor* d_y) {
    const std::vector<nn::Tensor> fx = ex.forward(x);
    const std::vector<nn::Tensor> fy = ex.forward(y);
    if (fx.size() != 2 || fy.size() != 2) {
        throw DataError("perceptual extractor must produce two feature stages");
    }
    double total = 0.0;
    std::vector<nn::Tensor> d_stages;
    for (std::size_t s = 0; s < 2; ++s) {
        if (!fx[s].same_shape(fy[s])) throw DataError("perceptual stage shape mismatch");
        const double inv = 1.0 / static_cast<double>(fx[s].size());
        double acc = 0.0;
        nn::Tensor d(fy[s].n, fy[s].c, fy[s].h, fy[s].w);
        for (std::size_t i = 0; i < fx[s].size(); ++i) {
            const double diff = fy[s].v[i] - fx[s].v[i];
            acc += diff * diff;
            if (d_y) d.v[i] = sw[s] * 2.0 * diff * inv;
        }
        total += sw[s] * acc * inv;
        if (d_y) d_stages.push_back(std::move(d));
    }
    if (d_y) *d_y = ex.backward(d_stages);
    return total;
}

}  // namespace

double perceptual_loss(const Grid2D& x, const Grid2D& y, FeatureExtractor& extractor,
                       const std::array<double, 2>& stage_weights, Grid2D* dy) {
    if (!x.same_shape(y)) throw ValidationError("perceptual inputs differ in shape");
    const int ch = extractor.input_channels();
    const nn::Tensor tx = replicate_channels(x, ch);
    const nn::Tensor ty = replicate_channels(y, ch);
    nn::Tensor d;
    const double v = perceptual_tensor(tx, ty, extractor, stage_weights, dy ? &d : nullptr);
    if (dy) {
        *dy = Grid2D(y.w, y.h);
        for (int c = 0; c < ch; ++c) {
            const double* dp = &d.v[d.index(0, c, 0, 0)];
            for (std::size_t i = 0; i < dy->size(); ++i) dy->v[i] += dp[i];
        }
    }
    return v;
}

// ------------------------------------------------------------ composition --

nn::Tensor grid_to_tensor(const Grid2D& g) {
    nn::Tensor t(1, 1, g.h, g.w);
    t.v = g.v;
    return t;
}

Grid2D tensor_to_grid(const nn::Tensor& t, int batch_index, int channel) {
    Grid2D g(t.w, t.h);
    const double* p = &t.v[t.index(batch_index, channel, 0, 0)];
    std::copy_n(p, g.size(), g.v.begin());
    return g;
}

LossBreakdown total_loss(const Grid2D& x, const Grid2D& recon, const LatentDistribution& d,
                         int epoch, const LossWeights& w, const SsimConfig& scfg,
                         FeatureExtractor& extractor) {
    d.validate();
    nn::Tensor mu(1, static_cast<int>(d.mu.size()), 1, 1);
    nn::Tensor logvar(1, static_cast<int>(d.mu.size()), 1, 1);
    mu.v = d.mu;
    for (std::size_t i = 0; i < d.sigma.size(); ++i) {
        logvar.v[i] = 2.0 * std::log(d.sigma[i]);
    }
    return total_loss_batch(grid_to_tensor(x), grid_to_tensor(recon), mu, logvar, epoch, w, scfg,
                            extractor);
}

LossBreakdown total_loss_batch(const nn::Tensor& x, const nn::Tensor& recon,
                               const nn::Tensor& mu, const nn::Tensor& logvar, int epoch,
                               const LossWeights& w, const SsimConfig& scfg,
                               FeatureExtractor& extractor, nn::Tensor* d_recon,
                               nn::Tensor* d_mu, nn::Tensor* d_logvar) {
    w.validate();
    if (!x.same_shape(recon)) throw ValidationError("total_loss: input/recon shape mismatch");
    if (x.c != 1) throw ValidationError("total_loss expects single-channel slices");
    const int n = x.n;
    const double inv_n = 1.0 / n;

    LossBreakdown out;
    out.beta = beta_schedule(epoch, w);
    out.w_ssim = w.w_ssim;
    out.w_perc = w.w_perc;

    if (d_recon) *d_recon = nn::Tensor(x.n, x.c, x.h, x.w);
    if (d_mu) *d_mu = nn::Tensor(mu.n, mu.c, 1, 1);
    if (d_logvar) *d_logvar = nn::Tensor(logvar.n, logvar.c, 1, 1);

    // MSE over batch and pixels.
    {
        const double inv = 1.0 / static_cast<double>(x.size());
        double acc = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double diff = recon.v[i] - x.v[i];
            acc += diff * diff;
            if (d_recon) d_recon->v[i] += 2.0 * diff * inv;
        }
        out.mse = acc * inv;
    }

    // SSIM loss, per sample then batch mean.
    for (int i = 0; i < n; ++i) {
        const Grid2D gx = tensor_to_grid(x, i);
        const Grid2D gr = tensor_to_grid(recon, i);
        Grid2D dyg;
        out.ssim += ssim_loss(gx, gr, scfg, d_recon ? &dyg : nullptr) * inv_n;
        if (d_recon) {
            double* dp = &d_recon->v[d_recon->index(i, 0, 0, 0)];
            for (std::size_t j = 0; j < dyg.size(); ++j) {
                dp[j] += w.w_ssim * dyg.v[j] * inv_n;
            }
        }
    }

    // KL, summed over dims, mean over batch.
    {
        const int dim = mu.c;
        for (int i = 0; i < n; ++i) {
            std::vector<double> m(dim), lv(dim), dm, dl;
            std::copy_n(&mu.v[static_cast<std::size_t>(i) * dim], dim, m.begin());
            std::copy_n(&logvar.v[static_cast<std::size_t>(i) * dim], dim, lv.begin());
            out.kl += kl_from_mu_logvar(m, lv, d_mu ? &dm : nullptr, d_logvar ? &dl : nullptr) *
                      inv_n;
            const double scale = out.beta * inv_n;
            if (d_mu) {
                for (int j = 0; j < dim; ++j) {
                    d_mu->v[static_cast<std::size_t>(i) * dim + j] = scale * dm[j];
                }
            }
            if (d_logvar) {
                for (int j = 0; j < dim; ++j) {
                    d_logvar->v[static_cast<std::size_t>(i) * dim + j] = scale * dl[j];
                }
            }
        }
    }

    // Perceptual: grayscale replicated to the extractor's channel arity.
    {
        const int ch = extractor.input_channels();
        nn::Tensor tx(x.n, ch, x.h, x.w), tr(x.n, ch, x.h, x.w);
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < ch; ++c) {
                std::copy_n(&x.v[x.index(i, 0, 0, 0)], x.plane(), &tx.v[tx.index(i, c, 0, 0)]);
                std::copy_n(&recon.v[recon.index(i, 0, 0, 0)], recon.plane(),
                            &tr.v[tr.index(i, c, 0, 0)]);
            }
        nn::Tensor d;
        out.perceptual = perceptual_tensor(tx, tr, extractor, w.perc_stage_weights,
                                           d_recon ? &d : nullptr);
        if (d_recon) {
            for (int i = 0; i < n; ++i) {
                double* dp = &d_recon->v[d_recon->index(i, 0, 0, 0)];
                for (int c = 0; c < ch; ++c) {
                    const double* sp = &d.v[d.index(i, c, 0, 0)];
                    for (std::size_t j = 0; j < x.plane(); ++j) dp[j] += w.w_perc * sp[j];
                }
            }
        }
    }

    out.total = out.w_mse * out.mse + w.w_ssim * out.ssim + out.beta * out.kl +
                w.w_perc * out.perceptual;
    if (!std::isfinite(out.total)) {
        throw DataError("non-finite training loss (mse=" + std::to_string(out.mse) +
                        ", ssim=" + std::to_string(out.ssim) + ", kl=" + std::to_string(out.kl) +
                        ", perceptual=" + std::to_string(out.perceptual) + ")");
    }
    return out;
}

}  // namespace uad
