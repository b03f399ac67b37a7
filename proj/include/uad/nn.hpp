#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "uad/rng.hpp"

namespace uad::nn {

// Minimal CPU autodiff-by-hand stack shared by the autoencoder and the
// denoiser. Everything is double precision so analytic gradients can be
// validated against central finite differences tightly.

/// Dense NCHW tensor, x fastest.
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_),
          v(static_cast<std::size_t>(n_) * c_ * h_ * w_, 0.0) {}

    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    std::size_t index(int in, int ic, int iy, int ix) const {
        return ((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix;
    }
    double& at(int in, int ic, int iy, int ix) { return v[index(in, ic, iy, ix)]; }
    double at(int in, int ic, int iy, int ix) const { return v[index(in, ic, iy, ix)]; }
    std::size_t size() const { return v.size(); }
    bool same_shape(const Tensor& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }
};

/// A learnable parameter block with its gradient accumulator.
struct Param {
    std::string name;
    std::vector<double> w;
    std::vector<double> g;

    void resize(std::size_t sz) {
        w.assign(sz, 0.0);
        g.assign(sz, 0.0);
    }
    void zero_grad() { std::fill(g.begin(), g.end(), 0.0); }
};

struct Layer {
    virtual ~Layer() = default;
    virtual void collect_params(std::vector<Param*>& out) {}
};

class Conv2d : public Layer {
public:
    Conv2d() = default;
    Conv2d(std::string name, int in_ch, int out_ch, int ksize, int stride = 1, int pad = -1);

    void init(RandomStream& rs);
    Tensor forward(const Tensor& x);
    /// Accumulates weight/bias grads, returns grad w.r.t. the cached input.
    Tensor backward(const Tensor& dy);
    void collect_params(std::vector<Param*>& out) override;

    int in_ch() const { return in_ch_; }
    int out_ch() const { return out_ch_; }
    Param weight, bias;

private:
    int in_ch_ = 0, out_ch_ = 0, k_ = 0, stride_ = 1, pad_ = 0;
    Tensor x_;
};

class BatchNorm2d : public Layer {
public:
    BatchNorm2d() = default;
    BatchNorm2d(std::string name, int ch, double eps = 1e-5, double momentum = 0.1);

    Tensor forward(const Tensor& x, bool train);
    Tensor backward(const Tensor& dy);
    void collect_params(std::vector<Param*>& out) override;

    Param gamma, beta;
    std::vector<double> running_mean, running_var;  // state, not optimized

private:
    int ch_ = 0;
    double eps_ = 1e-5, momentum_ = 0.1;
    Tensor xhat_;
    std::vector<double> inv_std_;
};

class LeakyReLU : public Layer {
public:
    explicit LeakyReLU(double slope = 0.01) : slope_(slope) {}
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy) const;

private:
    double slope_;
    Tensor x_;
};

class Sigmoid : public Layer {
public:
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy) const;

private:
    Tensor y_;
};

class Linear : public Layer {
public:
    Linear() = default;
    Linear(std::string name, int in_dim, int out_dim);

    void init(RandomStream& rs);
    /// x: (N, in_dim) packed as Tensor(n, in_dim, 1, 1).
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy);
    void collect_params(std::vector<Param*>& out) override;

    Param weight, bias;  // weight[out][in]

private:
    int in_ = 0, out_ = 0;
    Tensor x_;
};

/// (N,C,H,W) -> (N,C,1,1) mean; backward spreads the grad uniformly.
class GlobalAvgPool : public Layer {
public:
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy) const;

private:
    int h_ = 0, w_ = 0;
};

/// Bilinear 2x upsampling (half-pixel centers, edges clamped).
class UpsampleBilinear2x : public Layer {
public:
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& dy) const;

private:
    int h_ = 0, w_ = 0;
};

Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& d, int c_a, Tensor& da, Tensor& db);

/// Global L2 norm across every parameter gradient.
double grad_norm(const std::vector<Param*>& params);

/// Scales gradients so the global norm is at most max_norm; returns the
/// pre-clip norm.
double clip_grad_norm(const std::vector<Param*>& params, double max_norm);

/// Decoupled-weight-decay adaptive-moment optimizer.
class AdamW {
public:
    struct Options {
        double lr = 1e-4;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 0.01;
    };

    AdamW(std::vector<Param*> params, Options opt);
    void step();
    void zero_grad();
    const Options& options() const { return opt_; }
    void set_lr(double lr) { opt_.lr = lr; }

private:
    std::vector<Param*> params_;
    Options opt_;
    std::vector<std::vector<double>> m_, v_;
    std::int64_t t_ = 0;
};

}  // namespace uad::nn
