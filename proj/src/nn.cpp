#include "uad/nn.hpp"

#include <algorithm>
#include <cmath>

#include "uad/errors.hpp"

namespace uad::nn {

// ---------------------------------------------------------------- Conv2d --

Conv2d::Conv2d(std::string name, int in_ch, int out_ch, int ksize, int stride, int pad)
    : in_ch_(in_ch), out_ch_(out_ch), k_(ksize), stride_(stride),
      pad_(pad >= 0 ? pad : ksize / 2) {
    if (in_ch < 1 || out_ch < 1 || ksize < 1 || stride < 1) {
        throw ValidationError("invalid convolution geometry for " + name);
    }
    weight.name = name + ".weight";
    bias.name = name + ".bias";
    weight.resize(static_cast<std::size_t>(out_ch) * in_ch * ksize * ksize);
    bias.resize(out_ch);
}

void Conv2d::init(RandomStream& rs) {
    // He-style scaling for leaky activations.
    const double std = std::sqrt(2.0 / (static_cast<double>(in_ch_) * k_ * k_));
    for (double& w : weight.w) w = rs.normal() * std;
    std::fill(bias.w.begin(), bias.w.end(), 0.0);
}

Tensor Conv2d::forward(const Tensor& x) {
    if (x.c != in_ch_) {
        throw DataError(weight.name + ": expected " + std::to_string(in_ch_) +
                        " input channels, got " + std::to_string(x.c));
    }
    x_ = x;
    const int oh = (x.h + 2 * pad_ - k_) / stride_ + 1;
    const int ow = (x.w + 2 * pad_ - k_) / stride_ + 1;
    Tensor y(x.n, out_ch_, oh, ow);
    for (int n = 0; n < x.n; ++n)
        for (int oc = 0; oc < out_ch_; ++oc) {
            double* yp = &y.v[y.index(n, oc, 0, 0)];
            for (std::size_t i = 0; i < y.plane(); ++i) yp[i] = bias.w[oc];
            for (int ic = 0; ic < in_ch_; ++ic) {
                const double* wp = &weight.w[((static_cast<std::size_t>(oc) * in_ch_) + ic) *
                                             k_ * k_];
                const double* xp = &x.v[x.index(n, ic, 0, 0)];
                for (int ky = 0; ky < k_; ++ky)
                    for (int kx = 0; kx < k_; ++kx) {
                        const double wv = wp[ky * k_ + kx];
                        if (wv == 0.0) continue;
                        for (int oy = 0; oy < oh; ++oy) {
                            const int iy = oy * stride_ + ky - pad_;
                            if (iy < 0 || iy >= x.h) continue;
                            const double* xrow = xp + static_cast<std::size_t>(iy) * x.w;
                            double* yrow = yp + static_cast<std::size_t>(oy) * ow;
                            for (int ox = 0; ox < ow; ++ox) {
                                const int ix = ox * stride_ + kx - pad_;
                                if (ix < 0 || ix >= x.w) continue;
                                yrow[ox] += wv * xrow[ix];
                            }
                        }
                    }
            }
        }
    return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
    Tensor dx(x_.n, x_.c, x_.h, x_.w);
    const int oh = dy.h, ow = dy.w;
    for (int n = 0; n < x_.n; ++n)
        for (int oc = 0; oc < out_ch_; ++oc) {
            const double* gp = &dy.v[dy.index(n, oc, 0, 0)];
            double bsum = 0.0;
            for (std::size_t i = 0; i < dy.plane(); ++i) bsum += gp[i];
            bias.g[oc] += bsum;
            for (int ic = 0; ic < in_ch_; ++ic) {
                const std::size_t wbase =
                    ((static_cast<std::size_t>(oc) * in_ch_) + ic) * k_ * k_;
                const double* xp = &x_.v[x_.index(n, ic, 0, 0)];
                double* dxp = &dx.v[dx.index(n, ic, 0, 0)];
                for (int ky = 0; ky < k_; ++ky)
                    for (int kx = 0; kx < k_; ++kx) {
                        const double wv = weight.w[wbase + ky * k_ + kx];
                        double wg = 0.0;
                        for (int oy = 0; oy < oh; ++oy) {
                            const int iy = oy * stride_ + ky - pad_;
                            if (iy < 0 || iy >= x_.h) continue;
                            const double* xrow = xp + static_cast<std::size_t>(iy) * x_.w;
                            double* dxrow = dxp + static_cast<std::size_t>(iy) * x_.w;
                            const double* grow = gp + static_cast<std::size_t>(oy) * ow;
                            for (int ox = 0; ox < ow; ++ox) {
                                const int ix = ox * stride_ + kx - pad_;
                                if (ix < 0 || ix >= x_.w) continue;
                                wg += grow[ox] * xrow[ix];
                                dxrow[ix] += grow[ox] * wv;
                            }
                        }
                        weight.g[wbase + ky * k_ + kx] += wg;
                    }
            }
        }
    return dx;
}

void Conv2d::collect_params(std::vector<Param*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
}

// ----------------------------------------------------------- BatchNorm2d --

BatchNorm2d::BatchNorm2d(std::string name, int ch, double eps, double momentum)
    : ch_(ch), eps_(eps), momentum_(momentum) {
    gamma.name = name + ".gamma";
    beta.name = name + ".beta";
    gamma.resize(ch);
    beta.resize(ch);
    std::fill(gamma.w.begin(), gamma.w.end(), 1.0);
    running_mean.assign(ch, 0.0);
    running_var.assign(ch, 1.0);
}

Tensor BatchNorm2d::forward(const Tensor& x, bool train) {
    if (x.c != ch_) throw DataError(gamma.name + ": channel mismatch");
    Tensor y(x.n, x.c, x.h, x.w);
    const std::size_t plane = x.plane();
    const double m = static_cast<double>(x.n) * plane;

    if (train) {
        xhat_ = Tensor(x.n, x.c, x.h, x.w);
        inv_std_.assign(ch_, 0.0);
        for (int c = 0; c < ch_; ++c) {
            double mean = 0.0;
            for (int n = 0; n < x.n; ++n) {
                const double* xp = &x.v[x.index(n, c, 0, 0)];
                for (std::size_t i = 0; i < plane; ++i) mean += xp[i];
            }
            mean /= m;
            double var = 0.0;
            for (int n = 0; n < x.n; ++n) {
                const double* xp = &x.v[x.index(n, c, 0, 0)];
                for (std::size_t i = 0; i < plane; ++i) {
                    const double d = xp[i] - mean;
                    var += d * d;
                }
            }
            var /= m;
            const double inv = 1.0 / std::sqrt(var + eps_);
            inv_std_[c] = inv;
            for (int n = 0; n < x.n; ++n) {
                const double* xp = &x.v[x.index(n, c, 0, 0)];
                double* hp = &xhat_.v[xhat_.index(n, c, 0, 0)];
                double* yp = &y.v[y.index(n, c, 0, 0)];
                for (std::size_t i = 0; i < plane; ++i) {
                    hp[i] = (xp[i] - mean) * inv;
                    yp[i] = gamma.w[c] * hp[i] + beta.w[c];
                }
            }
            const double unbiased = m > 1.0 ? var * m / (m - 1.0) : var;
            running_mean[c] = (1.0 - momentum_) * running_mean[c] + momentum_ * mean;
            running_var[c] = (1.0 - momentum_) * running_var[c] + momentum_ * unbiased;
        }
    } else {
        for (int c = 0; c < ch_; ++c) {
            const double inv = 1.0 / std::sqrt(running_var[c] + eps_);
            const double scale = gamma.w[c] * inv;
            const double shift = beta.w[c] - scale * running_mean[c];
            for (int n = 0; n < x.n; ++n) {
                const double* xp = &x.v[x.index(n, c, 0, 0)];
                double* yp = &y.v[y.index(n, c, 0, 0)];
                for (std::size_t i = 0; i < plane; ++i) yp[i] = scale * xp[i] + shift;
            }
        }
    }
    return y;
}

Tensor BatchNorm2d::backward(const Tensor& dy) {
    if (xhat_.size() != dy.size()) {
        throw DataError(gamma.name + ": backward without a cached training forward");
    }
    Tensor dx(dy.n, dy.c, dy.h, dy.w);
    const std::size_t plane = dy.plane();
    const double m = static_cast<double>(dy.n) * plane;
    for (int c = 0; c < ch_; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int n = 0; n < dy.n; ++n) {
            const double* gp = &dy.v[dy.index(n, c, 0, 0)];
            const double* hp = &xhat_.v[xhat_.index(n, c, 0, 0)];
            for (std::size_t i = 0; i < plane; ++i) {
                sum_dy += gp[i];
                sum_dy_xhat += gp[i] * hp[i];
            }
        }
        gamma.g[c] += sum_dy_xhat;
        beta.g[c] += sum_dy;
        const double scale = gamma.w[c] * inv_std_[c] / m;
        for (int n = 0; n < dy.n; ++n) {
            const double* gp = &dy.v[dy.index(n, c, 0, 0)];
            const double* hp = &xhat_.v[xhat_.index(n, c, 0, 0)];
            double* dp = &dx.v[dx.index(n, c, 0, 0)];
            for (std::size_t i = 0; i < plane; ++i) {
                dp[i] = scale * (m * gp[i] - sum_dy - hp[i] * sum_dy_xhat);
            }
        }
    }
    return dx;
}

void BatchNorm2d::collect_params(std::vector<Param*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
}

// ------------------------------------------------------------ Activations --

Tensor LeakyReLU::forward(const Tensor& x) {
    x_ = x;
    Tensor y = x;
    for (double& v : y.v) {
        if (v < 0.0) v *= slope_;
    }
    return y;
}

Tensor LeakyReLU::backward(const Tensor& dy) const {
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.v.size(); ++i) {
        if (x_.v[i] < 0.0) dx.v[i] *= slope_;
    }
    return dx;
}

Tensor Sigmoid::forward(const Tensor& x) {
    y_ = x;
    for (double& v : y_.v) v = 1.0 / (1.0 + std::exp(-v));
    return y_;
}

Tensor Sigmoid::backward(const Tensor& dy) const {
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.v.size(); ++i) {
        dx.v[i] *= y_.v[i] * (1.0 - y_.v[i]);
    }
    return dx;
}

// ---------------------------------------------------------------- Linear --

Linear::Linear(std::string name, int in_dim, int out_dim) : in_(in_dim), out_(out_dim) {
    if (in_dim < 1 || out_dim < 1) throw ValidationError("invalid linear shape for " + name);
    weight.name = name + ".weight";
    bias.name = name + ".bias";
    weight.resize(static_cast<std::size_t>(out_dim) * in_dim);
    bias.resize(out_dim);
}

void Linear::init(RandomStream& rs) {
    const double std = std::sqrt(2.0 / in_);
    for (double& w : weight.w) w = rs.normal() * std;
    std::fill(bias.w.begin(), bias.w.end(), 0.0);
}

Tensor Linear::forward(const Tensor& x) {
    if (x.c * x.h * x.w != in_) throw DataError(weight.name + ": input size mismatch");
    x_ = x;
    Tensor y(x.n, out_, 1, 1);
    for (int n = 0; n < x.n; ++n) {
        const double* xp = &x.v[static_cast<std::size_t>(n) * in_];
        double* yp = &y.v[static_cast<std::size_t>(n) * out_];
        for (int o = 0; o < out_; ++o) {
            const double* wp = &weight.w[static_cast<std::size_t>(o) * in_];
            double acc = bias.w[o];
            for (int i = 0; i < in_; ++i) acc += wp[i] * xp[i];
            yp[o] = acc;
        }
    }
    return y;
}

Tensor Linear::backward(const Tensor& dy) {
    Tensor dx(x_.n, x_.c, x_.h, x_.w);
    for (int n = 0; n < x_.n; ++n) {
        const double* xp = &x_.v[static_cast<std::size_t>(n) * in_];
        const double* gp = &dy.v[static_cast<std::size_t>(n) * out_];
        double* dxp = &dx.v[static_cast<std::size_t>(n) * in_];
        for (int o = 0; o < out_; ++o) {
            const double g = gp[o];
            bias.g[o] += g;
            const double* wp = &weight.w[static_cast<std::size_t>(o) * in_];
            double* wg = &weight.g[static_cast<std::size_t>(o) * in_];
            for (int i = 0; i < in_; ++i) {
                wg[i] += g * xp[i];
                dxp[i] += g * wp[i];
            }
        }
    }
    return dx;
}

void Linear::collect_params(std::vector<Param*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
}

// ----------------------------------------------------------------- Pools --

Tensor GlobalAvgPool::forward(const Tensor& x) {
    h_ = x.h;
    w_ = x.w;
    Tensor y(x.n, x.c, 1, 1);
    const double inv = 1.0 / x.plane();
    for (int n = 0; n < x.n; ++n)
        for (int c = 0; c < x.c; ++c) {
            const double* xp = &x.v[x.index(n, c, 0, 0)];
            double acc = 0.0;
            for (std::size_t i = 0; i < x.plane(); ++i) acc += xp[i];
            y.at(n, c, 0, 0) = acc * inv;
        }
    return y;
}

Tensor GlobalAvgPool::backward(const Tensor& dy) const {
    Tensor dx(dy.n, dy.c, h_, w_);
    const double inv = 1.0 / (static_cast<double>(h_) * w_);
    for (int n = 0; n < dy.n; ++n)
        for (int c = 0; c < dy.c; ++c) {
            const double g = dy.at(n, c, 0, 0) * inv;
            double* dp = &dx.v[dx.index(n, c, 0, 0)];
            for (std::size_t i = 0; i < dx.plane(); ++i) dp[i] = g;
        }
    return dx;
}

// -------------------------------------------------------------- Upsample --

namespace {

// Half-pixel source coordinate for 2x upsampling: in = (out + 0.5)/2 - 0.5.
struct Lerp {
    int i0, i1;
    double w1;  // weight of i1; i0 gets 1-w1
};

Lerp lerp_coeff(int out_idx, int in_extent) {
    const double f = (out_idx + 0.5) * 0.5 - 0.5;
    double fl = std::floor(f);
    int i0 = static_cast<int>(fl);
    double w1 = f - fl;
    if (i0 < 0) {
        i0 = 0;
        w1 = 0.0;
    }
    int i1 = i0 + 1;
    if (i1 >= in_extent) {
        i1 = in_extent - 1;
        w1 = 0.0;
    }
    return {i0, i1, w1};
}

}  // namespace

Tensor UpsampleBilinear2x::forward(const Tensor& x) {
    h_ = x.h;
    w_ = x.w;
    Tensor y(x.n, x.c, x.h * 2, x.w * 2);
    std::vector<Lerp> lx(y.w), ly(y.h);
    for (int i = 0; i < y.w; ++i) lx[i] = lerp_coeff(i, x.w);
    for (int i = 0; i < y.h; ++i) ly[i] = lerp_coeff(i, x.h);
    for (int n = 0; n < x.n; ++n)
        for (int c = 0; c < x.c; ++c) {
            const double* xp = &x.v[x.index(n, c, 0, 0)];
            double* yp = &y.v[y.index(n, c, 0, 0)];
            for (int oy = 0; oy < y.h; ++oy) {
                const Lerp& py = ly[oy];
                const double* r0 = xp + static_cast<std::size_t>(py.i0) * x.w;
                const double* r1 = xp + static_cast<std::size_t>(py.i1) * x.w;
                double* yrow = yp + static_cast<std::size_t>(oy) * y.w;
                for (int ox = 0; ox < y.w; ++ox) {
                    const Lerp& px = lx[ox];
                    const double top = r0[px.i0] * (1 - px.w1) + r0[px.i1] * px.w1;
                    const double bot = r1[px.i0] * (1 - px.w1) + r1[px.i1] * px.w1;
                    yrow[ox] = top * (1 - py.w1) + bot * py.w1;
                }
            }
        }
    return y;
}

Tensor UpsampleBilinear2x::backward(const Tensor& dy) const {
    Tensor dx(dy.n, dy.c, h_, w_);
    std::vector<Lerp> lx(dy.w), ly(dy.h);
    for (int i = 0; i < dy.w; ++i) lx[i] = lerp_coeff(i, w_);
    for (int i = 0; i < dy.h; ++i) ly[i] = lerp_coeff(i, h_);
    for (int n = 0; n < dy.n; ++n)
        for (int c = 0; c < dy.c; ++c) {
            const double* gp = &dy.v[dy.index(n, c, 0, 0)];
            double* dp = &dx.v[dx.index(n, c, 0, 0)];
            for (int oy = 0; oy < dy.h; ++oy) {
                const Lerp& py = ly[oy];
                const double* grow = gp + static_cast<std::size_t>(oy) * dy.w;
                for (int ox = 0; ox < dy.w; ++ox) {
                    const Lerp& px = lx[ox];
                    const double g = grow[ox];
                    dp[static_cast<std::size_t>(py.i0) * w_ + px.i0] +=
                        g * (1 - py.w1) * (1 - px.w1);
                    dp[static_cast<std::size_t>(py.i0) * w_ + px.i1] += g * (1 - py.w1) * px.w1;
                    dp[static_cast<std::size_t>(py.i1) * w_ + px.i0] += g * py.w1 * (1 - px.w1);
                    dp[static_cast<std::size_t>(py.i1) * w_ + px.i1] += g * py.w1 * px.w1;
                }
            }
        }
    return dx;
}

// ---------------------------------------------------------------- Concat --

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.n != b.n || a.h != b.h || a.w != b.w) {
        throw DataError("concat_channels: spatial/batch mismatch");
    }
    Tensor y(a.n, a.c + b.c, a.h, a.w);
    for (int n = 0; n < a.n; ++n) {
        std::copy_n(&a.v[a.index(n, 0, 0, 0)], a.plane() * a.c, &y.v[y.index(n, 0, 0, 0)]);
        std::copy_n(&b.v[b.index(n, 0, 0, 0)], b.plane() * b.c, &y.v[y.index(n, a.c, 0, 0)]);
    }
    return y;
}

void split_channels(const Tensor& d, int c_a, Tensor& da, Tensor& db) {
    da = Tensor(d.n, c_a, d.h, d.w);
    db = Tensor(d.n, d.c - c_a, d.h, d.w);
    for (int n = 0; n < d.n; ++n) {
        std::copy_n(&d.v[d.index(n, 0, 0, 0)], d.plane() * c_a, &da.v[da.index(n, 0, 0, 0)]);
        std::copy_n(&d.v[d.index(n, c_a, 0, 0)], d.plane() * (d.c - c_a),
                    &db.v[db.index(n, 0, 0, 0)]);
    }
}

// ------------------------------------------------------------- Optimizer --

double grad_norm(const std::vector<Param*>& params) {
    double sq = 0.0;
    for (const Param* p : params)
        for (double g : p->g) sq += g * g;
    return std::sqrt(sq);
}

double clip_grad_norm(const std::vector<Param*>& params, double max_norm) {
    const double norm = grad_norm(params);
    if (norm > max_norm && norm > 0.0) {
        const double scale = max_norm / norm;
        for (Param* p : params)
            for (double& g : p->g) g *= scale;
    }
    return norm;
}

AdamW::AdamW(std::vector<Param*> params, Options opt) : params_(std::move(params)), opt_(opt) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Param* p : params_) {
        m_.emplace_back(p->w.size(), 0.0);
        v_.emplace_back(p->w.size(), 0.0);
    }
}

void AdamW::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
        Param& p = *params_[pi];
        auto& m = m_[pi];
        auto& v = v_[pi];
        for (std::size_t i = 0; i < p.w.size(); ++i) {
            m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * p.g[i];
            v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * p.g[i] * p.g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p.w[i] -= opt_.lr * (mhat / (std::sqrt(vhat) + opt_.eps) +
                                 opt_.weight_decay * p.w[i]);
        }
    }
}

void AdamW::zero_grad() {
    for (Param* p : params_) p->zero_grad();
}

}  // namespace uad::nn
