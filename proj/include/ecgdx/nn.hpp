#pragma once

// 1D CNN building blocks with hand-written reverse-mode gradients: grouped
// convolution, batch norm, relu, squeeze-excitation channel attention,
// bottleneck residual blocks, global average pooling and a linear head.
// Forward passes cache what backward needs; backward accumulates parameter
// gradients and returns the input gradient. Everything is single-threaded
// and deterministic for fixed parameters and input.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecgdx/tensor.hpp"
#include "ecgdx/util.hpp"

namespace ecgdx::nn {

// Named view into a layer's state. Non-trainable entries (batch-norm running
// statistics) travel with checkpoints but are skipped by the optimizer.
struct ParamRef {
    std::string name;
    Tensor* tensor = nullptr;
    bool trainable = true;
};

inline double sigmoid(double z) {
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// Kaiming-uniform fan-in init, relu gain.
inline void kaiming_uniform(Tensor& w, std::size_t fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : w.data) v = rng.uniform(-bound, bound);
}

// Bias init to uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)). Nonzero biases
// keep relu inputs away from exact zeros at init, where subgradients and
// finite differences would disagree.
inline void bias_uniform(Tensor& b, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : b.data) v = rng.uniform(-bound, bound);
}

// ---------------- conv1d ----------------

class Conv1d {
public:
    Conv1d() = default;

    Conv1d(int in_ch, int out_ch, int kernel, int stride, int groups)
        : in_ch_(in_ch), out_ch_(out_ch), kernel_(kernel), stride_(stride), groups_(groups) {
        if (kernel < 1 || kernel % 2 == 0) throw std::invalid_argument("kernel must be odd");
        if (stride < 1) throw std::invalid_argument("stride must be >= 1");
        if (groups < 1 || in_ch % groups != 0 || out_ch % groups != 0)
            throw std::invalid_argument("groups must divide channel counts");
        weight_ = Tensor::zeros({static_cast<std::size_t>(out_ch),
                                 static_cast<std::size_t>(in_ch / groups),
                                 static_cast<std::size_t>(kernel)});
        bias_ = Tensor::zeros({static_cast<std::size_t>(out_ch)});
        weight_.ensure_grad();
        bias_.ensure_grad();
    }

    void init(Rng& rng) {
        const std::size_t fan_in = static_cast<std::size_t>(in_ch_ / groups_) *
                                   static_cast<std::size_t>(kernel_);
        kaiming_uniform(weight_, fan_in, rng);
        bias_uniform(bias_, fan_in, rng);
    }

    static std::size_t out_len(std::size_t in_len, int kernel, int stride) {
        const std::size_t pad = static_cast<std::size_t>(kernel - 1) / 2;
        return (in_len + 2 * pad - static_cast<std::size_t>(kernel)) /
                   static_cast<std::size_t>(stride) +
               1;
    }

    Tensor forward(const Tensor& x) {
        if (x.rank() != 3 || x.shape[1] != static_cast<std::size_t>(in_ch_))
            throw std::invalid_argument("conv1d: input shape mismatch");
        x_cache_ = x;
        const std::size_t batch = x.shape[0];
        const std::size_t len = x.shape[2];
        const std::size_t lo = out_len(len, kernel_, stride_);
        Tensor y = Tensor::zeros({batch, static_cast<std::size_t>(out_ch_), lo});

        const int pad = (kernel_ - 1) / 2;
        const std::size_t cpg_in = static_cast<std::size_t>(in_ch_ / groups_);
        const std::size_t cpg_out = static_cast<std::size_t>(out_ch_ / groups_);

        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t oc = 0; oc < static_cast<std::size_t>(out_ch_); ++oc) {
                const std::size_t g = oc / cpg_out;
                double* yp = &y.data[(b * static_cast<std::size_t>(out_ch_) + oc) * lo];
                const double bias = bias_.data[oc];
                for (std::size_t t = 0; t < lo; ++t) yp[t] = bias;
                for (std::size_t icg = 0; icg < cpg_in; ++icg) {
                    const std::size_t ic = g * cpg_in + icg;
                    const double* xp = &x.data[(b * static_cast<std::size_t>(in_ch_) + ic) * len];
                    const double* wp = &weight_.data[(oc * cpg_in + icg) *
                                                     static_cast<std::size_t>(kernel_)];
                    for (int k = 0; k < kernel_; ++k) {
                        const double wk = wp[k];
                        if (wk == 0.0) continue;
                        // valid t range: 0 <= t*stride + k - pad < len
                        const int off = k - pad;
                        std::size_t t0 = 0;
                        if (off < 0)
                            t0 = static_cast<std::size_t>((-off + stride_ - 1) / stride_);
                        const long long hi =
                            (static_cast<long long>(len) - 1 - off) / stride_;
                        if (hi < static_cast<long long>(t0)) continue;
                        const std::size_t t1 =
                            std::min<std::size_t>(lo - 1, static_cast<std::size_t>(hi));
                        const double* xs = xp + (static_cast<long long>(t0) * stride_ + off);
                        if (stride_ == 1) {
                            for (std::size_t t = t0; t <= t1; ++t)
                                yp[t] += wk * xs[t - t0];
                        } else {
                            for (std::size_t t = t0; t <= t1; ++t)
                                yp[t] += wk * xs[(t - t0) * static_cast<std::size_t>(stride_)];
                        }
                    }
                }
            }
        }
        return y;
    }

    Tensor backward(const Tensor& gy) {
        const Tensor& x = x_cache_;
        const std::size_t batch = x.shape[0];
        const std::size_t len = x.shape[2];
        const std::size_t lo = gy.shape[2];
        Tensor gx = Tensor::zeros(x.shape);

        const int pad = (kernel_ - 1) / 2;
        const std::size_t cpg_in = static_cast<std::size_t>(in_ch_ / groups_);
        const std::size_t cpg_out = static_cast<std::size_t>(out_ch_ / groups_);

        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t oc = 0; oc < static_cast<std::size_t>(out_ch_); ++oc) {
                const std::size_t g = oc / cpg_out;
                const double* gyp = &gy.data[(b * static_cast<std::size_t>(out_ch_) + oc) * lo];
                for (std::size_t t = 0; t < lo; ++t) bias_.grad[oc] += gyp[t];
                for (std::size_t icg = 0; icg < cpg_in; ++icg) {
                    const std::size_t ic = g * cpg_in + icg;
                    const double* xp = &x.data[(b * static_cast<std::size_t>(in_ch_) + ic) * len];
                    double* gxp = &gx.data[(b * static_cast<std::size_t>(in_ch_) + ic) * len];
                    const std::size_t wbase = (oc * cpg_in + icg) *
                                              static_cast<std::size_t>(kernel_);
                    for (int k = 0; k < kernel_; ++k) {
                        const int off = k - pad;
                        std::size_t t0 = 0;
                        if (off < 0)
                            t0 = static_cast<std::size_t>((-off + stride_ - 1) / stride_);
                        const long long hi =
                            (static_cast<long long>(len) - 1 - off) / stride_;
                        if (hi < static_cast<long long>(t0)) continue;
                        const std::size_t t1 =
                            std::min<std::size_t>(lo - 1, static_cast<std::size_t>(hi));
                        const double wk = weight_.data[wbase + static_cast<std::size_t>(k)];
                        double gw = 0.0;
                        for (std::size_t t = t0; t <= t1; ++t) {
                            const std::size_t j = t * static_cast<std::size_t>(stride_) +
                                                  static_cast<std::size_t>(off);
                            gw += gyp[t] * xp[j];
                            gxp[j] += gyp[t] * wk;
                        }
                        weight_.grad[wbase + static_cast<std::size_t>(k)] += gw;
                    }
                }
            }
        }
        return gx;
    }

    void collect(std::vector<ParamRef>& out, const std::string& prefix) {
        out.push_back({prefix + ".w", &weight_, true});
        out.push_back({prefix + ".b", &bias_, true});
    }

    Tensor& weight() { return weight_; }
    Tensor& bias() { return bias_; }
    int stride() const { return stride_; }

private:
    int in_ch_ = 0, out_ch_ = 0, kernel_ = 1, stride_ = 1, groups_ = 1;
    Tensor weight_;  // (out_ch, in_ch/groups, kernel)
    Tensor bias_;    // (out_ch)
    Tensor x_cache_;
};

// ---------------- batch norm ----------------

class BatchNorm1d {
public:
    BatchNorm1d() = default;

    explicit BatchNorm1d(int channels, double momentum = 0.1, double eps = 1e-5)
        : channels_(channels), momentum_(momentum), eps_(eps) {
        gamma_ = Tensor::zeros({static_cast<std::size_t>(channels)});
        beta_ = Tensor::zeros({static_cast<std::size_t>(channels)});
        running_mean_ = Tensor::zeros({static_cast<std::size_t>(channels)});
        running_var_ = Tensor::zeros({static_cast<std::size_t>(channels)});
        for (auto& v : gamma_.data) v = 1.0;
        for (auto& v : running_var_.data) v = 1.0;
        gamma_.ensure_grad();
        beta_.ensure_grad();
    }

    Tensor forward(const Tensor& x, bool training) {
        const std::size_t batch = x.shape[0];
        const std::size_t ch = x.shape[1];
        const std::size_t len = x.shape[2];
        if (ch != static_cast<std::size_t>(channels_))
            throw std::invalid_argument("batchnorm: channel mismatch");
        training_ = training;
        Tensor y = Tensor::zeros(x.shape);
        const double n = static_cast<double>(batch * len);

        if (training) {
            mean_.assign(ch, 0.0);
            invstd_.assign(ch, 0.0);
            xhat_ = Tensor::zeros(x.shape);
            for (std::size_t c = 0; c < ch; ++c) {
                double m = 0.0;
                for (std::size_t b = 0; b < batch; ++b) {
                    const double* xp = &x.data[(b * ch + c) * len];
                    for (std::size_t t = 0; t < len; ++t) m += xp[t];
                }
                m /= n;
                double var = 0.0;
                for (std::size_t b = 0; b < batch; ++b) {
                    const double* xp = &x.data[(b * ch + c) * len];
                    for (std::size_t t = 0; t < len; ++t) var += (xp[t] - m) * (xp[t] - m);
                }
                var /= n;
                mean_[c] = m;
                invstd_[c] = 1.0 / std::sqrt(var + eps_);
                running_mean_.data[c] = (1.0 - momentum_) * running_mean_.data[c] + momentum_ * m;
                running_var_.data[c] = (1.0 - momentum_) * running_var_.data[c] + momentum_ * var;
                const double g = gamma_.data[c], bb = beta_.data[c], is = invstd_[c];
                for (std::size_t b = 0; b < batch; ++b) {
                    const double* xp = &x.data[(b * ch + c) * len];
                    double* hp = &xhat_.data[(b * ch + c) * len];
                    double* yp = &y.data[(b * ch + c) * len];
                    for (std::size_t t = 0; t < len; ++t) {
                        hp[t] = (xp[t] - m) * is;
                        yp[t] = g * hp[t] + bb;
                    }
                }
            }
        } else {
            for (std::size_t c = 0; c < ch; ++c) {
                const double is = 1.0 / std::sqrt(running_var_.data[c] + eps_);
                const double m = running_mean_.data[c];
                const double g = gamma_.data[c], bb = beta_.data[c];
                for (std::size_t b = 0; b < batch; ++b) {
                    const double* xp = &x.data[(b * ch + c) * len];
                    double* yp = &y.data[(b * ch + c) * len];
                    for (std::size_t t = 0; t < len; ++t) yp[t] = g * (xp[t] - m) * is + bb;
                }
            }
        }
        return y;
    }

    Tensor backward(const Tensor& gy) {
        const std::size_t batch = gy.shape[0];
        const std::size_t ch = gy.shape[1];
        const std::size_t len = gy.shape[2];
        Tensor gx = Tensor::zeros(gy.shape);

        if (!training_) {
            for (std::size_t c = 0; c < ch; ++c) {
                const double scale = gamma_.data[c] / std::sqrt(running_var_.data[c] + eps_);
                for (std::size_t b = 0; b < batch; ++b) {
                    const double* gp = &gy.data[(b * ch + c) * len];
                    double* gxp = &gx.data[(b * ch + c) * len];
                    for (std::size_t t = 0; t < len; ++t) gxp[t] = gp[t] * scale;
                }
            }
            return gx;
        }

        const double n = static_cast<double>(batch * len);
        for (std::size_t c = 0; c < ch; ++c) {
            double sum_gy = 0.0, sum_gy_xhat = 0.0;
            for (std::size_t b = 0; b < batch; ++b) {
                const double* gp = &gy.data[(b * ch + c) * len];
                const double* hp = &xhat_.data[(b * ch + c) * len];
                for (std::size_t t = 0; t < len; ++t) {
                    sum_gy += gp[t];
                    sum_gy_xhat += gp[t] * hp[t];
                }
            }
            beta_.grad[c] += sum_gy;
            gamma_.grad[c] += sum_gy_xhat;
            const double g = gamma_.data[c], is = invstd_[c];
            for (std::size_t b = 0; b < batch; ++b) {
                const double* gp = &gy.data[(b * ch + c) * len];
                const double* hp = &xhat_.data[(b * ch + c) * len];
                double* gxp = &gx.data[(b * ch + c) * len];
                for (std::size_t t = 0; t < len; ++t)
                    gxp[t] = g * is / n * (n * gp[t] - sum_gy - hp[t] * sum_gy_xhat);
            }
        }
        return gx;
    }

    void collect(std::vector<ParamRef>& out, const std::string& prefix) {
        out.push_back({prefix + ".gamma", &gamma_, true});
        out.push_back({prefix + ".beta", &beta_, true});
        out.push_back({prefix + ".running_mean", &running_mean_, false});
        out.push_back({prefix + ".running_var", &running_var_, false});
    }

private:
    int channels_ = 0;
    double momentum_ = 0.1, eps_ = 1e-5;
    bool training_ = true;
    Tensor gamma_, beta_, running_mean_, running_var_;
    Tensor xhat_;
    std::vector<double> mean_, invstd_;
};

// ---------------- relu ----------------

class ReLU {
public:
    Tensor forward(const Tensor& x) {
        mask_.assign(x.data.size(), 0);
        Tensor y = x;
        for (std::size_t i = 0; i < y.data.size(); ++i) {
            if (y.data[i] > 0.0) {
                mask_[i] = 1;
            } else {
                y.data[i] = 0.0;
            }
        }
        return y;
    }

    Tensor backward(const Tensor& gy) {
        Tensor gx = gy;
        for (std::size_t i = 0; i < gx.data.size(); ++i)
            if (!mask_[i]) gx.data[i] = 0.0;
        return gx;
    }

private:
    std::vector<std::uint8_t> mask_;
};

// ---------------- squeeze-excitation attention ----------------

// squeeze: per-channel global mean over length; excitation:
// sigmoid(w2 * relu(w1 * squeeze)); output: x scaled per channel.
class SEAttention {
public:
    SEAttention() = default;

    SEAttention(int channels, int reduction) : channels_(channels) {
        if (reduction < 1) throw std::invalid_argument("se reduction must be >= 1");
        hidden_ = channels / reduction;
        if (hidden_ < 1) hidden_ = 1;
        w1_ = Tensor::zeros({static_cast<std::size_t>(hidden_), static_cast<std::size_t>(channels)});
        w2_ = Tensor::zeros({static_cast<std::size_t>(channels), static_cast<std::size_t>(hidden_)});
        w1_.ensure_grad();
        w2_.ensure_grad();
    }

    void init(Rng& rng) {
        kaiming_uniform(w1_, static_cast<std::size_t>(channels_), rng);
        kaiming_uniform(w2_, static_cast<std::size_t>(hidden_), rng);
    }

    Tensor forward(const Tensor& x) {
        const std::size_t batch = x.shape[0];
        const std::size_t ch = x.shape[1];
        const std::size_t len = x.shape[2];
        if (ch != static_cast<std::size_t>(channels_))
            throw std::invalid_argument("se: channel mismatch");
        x_cache_ = x;
        squeeze_ = Tensor::zeros({batch, ch});
        hidden_act_ = Tensor::zeros({batch, static_cast<std::size_t>(hidden_)});
        gates_ = Tensor::zeros({batch, ch});

        Tensor y = Tensor::zeros(x.shape);
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t c = 0; c < ch; ++c) {
                const double* xp = &x.data[(b * ch + c) * len];
                double m = 0.0;
                for (std::size_t t = 0; t < len; ++t) m += xp[t];
                squeeze_.at(b, c) = m / static_cast<double>(len);
            }
            for (std::size_t h = 0; h < static_cast<std::size_t>(hidden_); ++h) {
                double z = 0.0;
                for (std::size_t c = 0; c < ch; ++c) z += w1_.at(h, c) * squeeze_.at(b, c);
                hidden_act_.at(b, h) = z > 0.0 ? z : 0.0;
            }
            for (std::size_t c = 0; c < ch; ++c) {
                double z = 0.0;
                for (std::size_t h = 0; h < static_cast<std::size_t>(hidden_); ++h)
                    z += w2_.at(c, h) * hidden_act_.at(b, h);
                const double e = sigmoid(z);
                gates_.at(b, c) = e;
                const double* xp = &x.data[(b * ch + c) * len];
                double* yp = &y.data[(b * ch + c) * len];
                for (std::size_t t = 0; t < len; ++t) yp[t] = xp[t] * e;
            }
        }
        return y;
    }

    Tensor backward(const Tensor& gy) {
        const Tensor& x = x_cache_;
        const std::size_t batch = x.shape[0];
        const std::size_t ch = x.shape[1];
        const std::size_t len = x.shape[2];
        Tensor gx = Tensor::zeros(x.shape);

        for (std::size_t b = 0; b < batch; ++b) {
            // d(gate) and pass-through term
            std::vector<double> dgate(ch, 0.0);
            for (std::size_t c = 0; c < ch; ++c) {
                const double* xp = &x.data[(b * ch + c) * len];
                const double* gp = &gy.data[(b * ch + c) * len];
                double* gxp = &gx.data[(b * ch + c) * len];
                const double e = gates_.at(b, c);
                double acc = 0.0;
                for (std::size_t t = 0; t < len; ++t) {
                    acc += gp[t] * xp[t];
                    gxp[t] += gp[t] * e;
                }
                dgate[c] = acc;
            }
            // through sigmoid
            std::vector<double> dz2(ch);
            for (std::size_t c = 0; c < ch; ++c) {
                const double e = gates_.at(b, c);
                dz2[c] = dgate[c] * e * (1.0 - e);
            }
            // w2 and hidden
            std::vector<double> dh(static_cast<std::size_t>(hidden_), 0.0);
            for (std::size_t c = 0; c < ch; ++c)
                for (std::size_t h = 0; h < static_cast<std::size_t>(hidden_); ++h) {
                    w2_.grad[c * static_cast<std::size_t>(hidden_) + h] +=
                        dz2[c] * hidden_act_.at(b, h);
                    dh[h] += dz2[c] * w2_.at(c, h);
                }
            // relu and w1
            std::vector<double> ds(ch, 0.0);
            for (std::size_t h = 0; h < static_cast<std::size_t>(hidden_); ++h) {
                if (hidden_act_.at(b, h) <= 0.0) continue;  // relu gate
                for (std::size_t c = 0; c < ch; ++c) {
                    w1_.grad[h * ch + c] += dh[h] * squeeze_.at(b, c);
                    ds[c] += dh[h] * w1_.at(h, c);
                }
            }
            // squeeze is a mean over length
            for (std::size_t c = 0; c < ch; ++c) {
                double* gxp = &gx.data[(b * ch + c) * len];
                const double per = ds[c] / static_cast<double>(len);
                for (std::size_t t = 0; t < len; ++t) gxp[t] += per;
            }
        }
        return gx;
    }

    void collect(std::vector<ParamRef>& out, const std::string& prefix) {
        out.push_back({prefix + ".w1", &w1_, true});
        out.push_back({prefix + ".w2", &w2_, true});
    }

    Tensor& w1() { return w1_; }
    Tensor& w2() { return w2_; }

private:
    int channels_ = 0, hidden_ = 0;
    Tensor w1_, w2_;
    Tensor x_cache_, squeeze_, hidden_act_, gates_;
};

// ---------------- pooling and linear head ----------------

class GlobalAvgPool {
public:
    Tensor forward(const Tensor& x) {
        len_ = x.shape[2];
        Tensor y = Tensor::zeros({x.shape[0], x.shape[1]});
        for (std::size_t b = 0; b < x.shape[0]; ++b)
            for (std::size_t c = 0; c < x.shape[1]; ++c) {
                const double* xp = &x.data[(b * x.shape[1] + c) * len_];
                double m = 0.0;
                for (std::size_t t = 0; t < len_; ++t) m += xp[t];
                y.at(b, c) = m / static_cast<double>(len_);
            }
        return y;
    }

    Tensor backward(const Tensor& gy) {
        Tensor gx = Tensor::zeros({gy.shape[0], gy.shape[1], len_});
        for (std::size_t b = 0; b < gy.shape[0]; ++b)
            for (std::size_t c = 0; c < gy.shape[1]; ++c) {
                const double per = gy.at(b, c) / static_cast<double>(len_);
                double* gxp = &gx.data[(b * gy.shape[1] + c) * len_];
                for (std::size_t t = 0; t < len_; ++t) gxp[t] = per;
            }
        return gx;
    }

private:
    std::size_t len_ = 0;
};

class Linear {
public:
    Linear() = default;

    Linear(int in_features, int out_features) : in_(in_features), out_(out_features) {
        weight_ = Tensor::zeros({static_cast<std::size_t>(out_features),
                                 static_cast<std::size_t>(in_features)});
        bias_ = Tensor::zeros({static_cast<std::size_t>(out_features)});
        weight_.ensure_grad();
        bias_.ensure_grad();
    }

    void init(Rng& rng) {
        kaiming_uniform(weight_, static_cast<std::size_t>(in_), rng);
        bias_uniform(bias_, static_cast<std::size_t>(in_), rng);
    }

    Tensor forward(const Tensor& x) {
        if (x.rank() != 2 || x.shape[1] != static_cast<std::size_t>(in_))
            throw std::invalid_argument("linear: input shape mismatch");
        x_cache_ = x;
        Tensor y = Tensor::zeros({x.shape[0], static_cast<std::size_t>(out_)});
        for (std::size_t b = 0; b < x.shape[0]; ++b)
            for (std::size_t o = 0; o < static_cast<std::size_t>(out_); ++o) {
                double z = bias_.data[o];
                for (std::size_t i = 0; i < static_cast<std::size_t>(in_); ++i)
                    z += weight_.at(o, i) * x.at(b, i);
                y.at(b, o) = z;
            }
        return y;
    }

    Tensor backward(const Tensor& gy) {
        const Tensor& x = x_cache_;
        Tensor gx = Tensor::zeros(x.shape);
        for (std::size_t b = 0; b < x.shape[0]; ++b)
            for (std::size_t o = 0; o < static_cast<std::size_t>(out_); ++o) {
                const double g = gy.at(b, o);
                bias_.grad[o] += g;
                for (std::size_t i = 0; i < static_cast<std::size_t>(in_); ++i) {
                    weight_.grad[o * static_cast<std::size_t>(in_) + i] += g * x.at(b, i);
                    gx.at(b, i) += g * weight_.at(o, i);
                }
            }
        return gx;
    }

    void collect(std::vector<ParamRef>& out, const std::string& prefix) {
        out.push_back({prefix + ".w", &weight_, true});
        out.push_back({prefix + ".b", &bias_, true});
    }

    Tensor& weight() { return weight_; }
    Tensor& bias() { return bias_; }

private:
    int in_ = 0, out_ = 0;
    Tensor weight_, bias_;
    Tensor x_cache_;
};

// ---------------- bottleneck block ----------------

struct BlockConfig {
    int in_ch = 0;
    int bottleneck_ch = 0;
    int out_ch = 0;
    int kernel = 7;
    int stride = 1;
    int groups = 1;
    int se_reduction = 4;

    void validate() const {
        if (in_ch < 1 || bottleneck_ch < 1 || out_ch < 1)
            throw std::invalid_argument("block channels must be positive");
        if (kernel < 1 || kernel % 2 == 0) throw std::invalid_argument("block kernel must be odd");
        if (stride < 1) throw std::invalid_argument("block stride must be >= 1");
        if (bottleneck_ch % groups != 0)
            throw std::invalid_argument("groups must divide bottleneck channels");
        if (se_reduction < 1) throw std::invalid_argument("se_reduction must be >= 1");
    }

    bool identity_shortcut() const { return in_ch == out_ch && stride == 1; }
};

// 1x1 reduce -> norm -> relu -> grouped kxconv (stride) -> norm -> relu ->
// 1x1 expand -> channel attention -> add shortcut -> relu
class BottleneckBlock {
public:
    BottleneckBlock() = default;

    explicit BottleneckBlock(const BlockConfig& cfg) : cfg_(cfg) {
        cfg.validate();
        reduce_ = Conv1d(cfg.in_ch, cfg.bottleneck_ch, 1, 1, 1);
        bn1_ = BatchNorm1d(cfg.bottleneck_ch);
        conv_ = Conv1d(cfg.bottleneck_ch, cfg.bottleneck_ch, cfg.kernel, cfg.stride, cfg.groups);
        bn2_ = BatchNorm1d(cfg.bottleneck_ch);
        expand_ = Conv1d(cfg.bottleneck_ch, cfg.out_ch, 1, 1, 1);
        se_ = SEAttention(cfg.out_ch, cfg.se_reduction);
        if (!cfg.identity_shortcut())
            projection_ = std::make_unique<Conv1d>(cfg.in_ch, cfg.out_ch, 1, cfg.stride, 1);
    }

    BottleneckBlock(const BottleneckBlock&) = delete;
    BottleneckBlock& operator=(const BottleneckBlock&) = delete;
    BottleneckBlock(BottleneckBlock&&) = default;
    BottleneckBlock& operator=(BottleneckBlock&&) = default;

    void init(Rng& rng) {
        reduce_.init(rng);
        conv_.init(rng);
        expand_.init(rng);
        se_.init(rng);
        if (projection_) projection_->init(rng);
    }

    Tensor forward(const Tensor& x, bool training) {
        Tensor h = relu1_.forward(bn1_.forward(reduce_.forward(x), training));
        h = relu2_.forward(bn2_.forward(conv_.forward(h), training));
        h = se_.forward(expand_.forward(h));
        Tensor shortcut = projection_ ? projection_->forward(x) : x;
        if (shortcut.shape != h.shape)
            throw std::invalid_argument("bottleneck: shortcut shape mismatch");
        for (std::size_t i = 0; i < h.data.size(); ++i) h.data[i] += shortcut.data[i];
        return relu_out_.forward(h);
    }

    Tensor backward(const Tensor& gy) {
        Tensor g = relu_out_.backward(gy);
        Tensor g_short = g;  // the add fans gradient out to both branches
        Tensor g_main = se_.backward(g);
        g_main = expand_.backward(g_main);
        g_main = relu2_.backward(g_main);
        g_main = bn2_.backward(g_main);
        g_main = conv_.backward(g_main);
        g_main = relu1_.backward(g_main);
        g_main = bn1_.backward(g_main);
        g_main = reduce_.backward(g_main);
        Tensor gx = projection_ ? projection_->backward(g_short) : std::move(g_short);
        for (std::size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += g_main.data[i];
        return gx;
    }

    void collect(std::vector<ParamRef>& out, const std::string& prefix) {
        reduce_.collect(out, prefix + ".reduce");
        bn1_.collect(out, prefix + ".bn1");
        conv_.collect(out, prefix + ".conv");
        bn2_.collect(out, prefix + ".bn2");
        expand_.collect(out, prefix + ".expand");
        se_.collect(out, prefix + ".se");
        if (projection_) projection_->collect(out, prefix + ".proj");
    }

    Conv1d& expand_conv() { return expand_; }
    const BlockConfig& config() const { return cfg_; }

private:
    BlockConfig cfg_;
    Conv1d reduce_, conv_, expand_;
    BatchNorm1d bn1_, bn2_;
    ReLU relu1_, relu2_, relu_out_;
    SEAttention se_;
    std::unique_ptr<Conv1d> projection_;
};

}  // namespace ecgdx::nn
