#include "uad/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "uad/errors.hpp"
#include "uad/rng.hpp"

namespace uad {

void TrainConfig::validate() const {
    if (epochs < 1) throw ValidationError("epochs must be positive");
    if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
    if (patience < 1) throw ValidationError("patience must be positive");
    if (!(grad_clip_norm > 0.0)) throw ValidationError("grad_clip_norm must be positive");
    if (batch_size < 1) throw ValidationError("batch_size must be positive");
    if (weight_decay < 0.0) throw ValidationError("weight_decay must be nonnegative");
}

namespace {

nlohmann::json breakdown_json(const LossBreakdown& b) {
    return {{"mse", b.mse},       {"ssim", b.ssim},   {"kl", b.kl},
            {"perceptual", b.perceptual}, {"beta", b.beta}, {"total", b.total}};
}

nn::Tensor batch_tensor(const std::vector<Slice2D>& slices, const std::vector<int>& idx,
                        std::size_t lo, std::size_t hi) {
    const Grid2D& first = slices[idx[lo]].pixels;
    nn::Tensor x(static_cast<int>(hi - lo), 1, first.h, first.w);
    for (std::size_t i = lo; i < hi; ++i) {
        const Grid2D& g = slices[idx[i]].pixels;
        if (!g.same_shape(first)) throw DataError("training slices have mixed shapes");
        std::copy(g.v.begin(), g.v.end(), x.v.begin() + (i - lo) * g.size());
    }
    return x;
}

struct Accum {
    double mse = 0, ssim = 0, kl = 0, perceptual = 0, total = 0;
    std::size_t n = 0;

    void add(const LossBreakdown& b, std::size_t batch) {
        const double k = static_cast<double>(batch);
        mse += b.mse * k;
        ssim += b.ssim * k;
        kl += b.kl * k;
        perceptual += b.perceptual * k;
        total += b.total * k;
        n += batch;
    }

    LossBreakdown mean(double beta, const LossWeights& w) const {
        LossBreakdown b;
        const double k = n ? static_cast<double>(n) : 1.0;
        b.mse = mse / k;
        b.ssim = ssim / k;
        b.kl = kl / k;
        b.perceptual = perceptual / k;
        b.total = total / k;
        b.beta = beta;
        b.w_ssim = w.w_ssim;
        b.w_perc = w.w_perc;
        return b;
    }
};

}  // namespace

nlohmann::json EpochStats::to_json() const {
    return {{"epoch", epoch},
            {"beta", beta},
            {"train", breakdown_json(train_mean)},
            {"val", breakdown_json(val_mean)},
            {"grad_norm_mean", grad_norm_mean},
            {"grad_norm_max", grad_norm_max},
            {"best_val", best_val},
            {"is_best", is_best}};
}

TrainResult train(ResVae& model, const std::vector<Slice2D>& train_slices,
                  const std::vector<Slice2D>& val_slices, const TrainConfig& cfg,
                  const LossWeights& weights, const SsimConfig& ssim_cfg,
                  FeatureExtractor& extractor, std::ostream* log) {
    cfg.validate();
    weights.validate();
    ssim_cfg.validate();
    if (train_slices.empty()) throw DataError("training set is empty");
    if (val_slices.empty()) throw DataError("validation set is empty");

    std::vector<nn::Param*> params = model.params();
    nn::AdamW::Options opt_cfg;
    opt_cfg.lr = cfg.learning_rate;
    opt_cfg.weight_decay = cfg.weight_decay;
    nn::AdamW opt(params, opt_cfg);

    const int latent = model.config().latent_dim;

    auto snapshot = [&]() {
        std::vector<std::vector<double>> shot;
        for (const nn::Param* p : params) shot.push_back(p->w);
        for (const auto& [name, vec] : model.state_arrays()) shot.push_back(*vec);
        return shot;
    };
    auto restore = [&](const std::vector<std::vector<double>>& shot) {
        std::size_t i = 0;
        for (nn::Param* p : params) p->w = shot[i++];
        for (auto& [name, vec] : model.state_arrays()) *vec = shot[i++];
    };

    std::vector<int> train_idx(train_slices.size());
    std::iota(train_idx.begin(), train_idx.end(), 0);
    std::vector<int> val_idx(val_slices.size());
    std::iota(val_idx.begin(), val_idx.end(), 0);

    TrainResult result;
    result.best_val = std::numeric_limits<double>::infinity();
    std::vector<std::vector<double>> best_weights = snapshot();
    int epochs_without_improvement = 0;
    const std::size_t bsz = static_cast<std::size_t>(cfg.batch_size);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double beta = beta_schedule(epoch, weights);
        RandomStream shuffle_rs(fanout_seed(cfg.seed, "train-shuffle", epoch));
        shuffle_rs.shuffle(train_idx);
        RandomStream eps_rs(fanout_seed(cfg.seed, "train-eps", epoch));

        Accum train_acc;
        double grad_sum = 0.0, grad_max = 0.0;
        std::size_t steps = 0;
        for (std::size_t lo = 0; lo < train_idx.size(); lo += bsz) {
            const std::size_t hi = std::min(lo + bsz, train_idx.size());
            nn::Tensor x = batch_tensor(train_slices, train_idx, lo, hi);
            nn::Tensor eps(x.n, latent, 1, 1);
            for (double& e : eps.v) e = eps_rs.normal();

            ResVae::ForwardResult fr = model.forward(x, &eps, /*train=*/true);
            nn::Tensor d_recon, d_mu, d_logvar;
            const LossBreakdown b = total_loss_batch(x, fr.recon, fr.mu, fr.logvar, epoch,
                                                     weights, ssim_cfg, extractor, &d_recon,
                                                     &d_mu, &d_logvar);
            opt.zero_grad();
            model.backward(d_recon, d_mu, d_logvar);
            const double gnorm = nn::clip_grad_norm(params, cfg.grad_clip_norm);
            opt.step();

            train_acc.add(b, hi - lo);
            grad_sum += gnorm;
            grad_max = std::max(grad_max, gnorm);
            ++steps;
        }

        Accum val_acc;
        for (std::size_t lo = 0; lo < val_idx.size(); lo += bsz) {
            const std::size_t hi = std::min(lo + bsz, val_idx.size());
            nn::Tensor x = batch_tensor(val_slices, val_idx, lo, hi);
            ResVae::ForwardResult fr = model.forward(x, nullptr, /*train=*/false);
            const LossBreakdown b = total_loss_batch(x, fr.recon, fr.mu, fr.logvar, epoch,
                                                     weights, ssim_cfg, extractor);
            val_acc.add(b, hi - lo);
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.beta = beta;
        stats.train_mean = train_acc.mean(beta, weights);
        stats.val_mean = val_acc.mean(beta, weights);
        stats.grad_norm_mean = steps ? grad_sum / static_cast<double>(steps) : 0.0;
        stats.grad_norm_max = grad_max;

        if (stats.val_mean.total < result.best_val) {
            result.best_val = stats.val_mean.total;
            result.best_epoch = epoch;
            best_weights = snapshot();
            epochs_without_improvement = 0;
            stats.is_best = true;
        } else {
            ++epochs_without_improvement;
        }
        stats.best_val = result.best_val;
        result.history.push_back(stats);
        result.stop_epoch = epoch + 1;
        if (log) *log << stats.to_json().dump() << "\n";

        if (epochs_without_improvement >= cfg.patience) break;
    }

    restore(best_weights);
    return result;
}

}  // namespace uad
