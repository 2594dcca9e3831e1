#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "latentstat/random.hpp"
#include "latentstat/tensor.hpp"

namespace latentstat {

enum class Mode { train, infer };

namespace detail {

/// Glorot-uniform fill: +-sqrt(6/(fan_in+fan_out)).
inline void init_uniform(std::vector<double>& w, std::size_t fan_in, std::size_t fan_out,
                         Rng& rng) {
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& v : w) v = rng.uniform(-bound, bound);
}

[[noreturn]] inline void shape_error(const std::string& layer, const std::string& detail) {
    throw std::invalid_argument(layer + ": " + detail);
}

}  // namespace detail

/// Differentiable module. forward caches what backward needs; backward
/// accumulates parameter gradients and returns the input gradient.
class Layer {
public:
    virtual ~Layer() = default;
    virtual std::string kind() const = 0;
    virtual Tensor forward(const Tensor& x, Mode mode) = 0;
    virtual Tensor backward(const Tensor& grad_out) = 0;
    virtual std::vector<ParamBlock> parameters() { return {}; }

    void zero_grad() {
        for (auto& p : parameters())
            if (p.grad)
                std::fill(p.grad->begin(), p.grad->end(), 0.0);
    }

protected:
    void require_forward(bool have_cache) const {
        if (!have_cache) throw std::logic_error(kind() + ": backward called before forward");
    }
};

// ============================================================================
// Dense
// ============================================================================

/// Fully connected layer over (batch, in) inputs: y = x W^T + b.
class Dense : public Layer {
public:
    Dense(std::size_t in, std::size_t out, Rng& rng)
        : in_(in), out_(out), w_(in * out), b_(out, 0.0), gw_(in * out, 0.0), gb_(out, 0.0) {
        detail::init_uniform(w_, in, out, rng);
    }

    std::string kind() const override { return "dense"; }

    Tensor forward(const Tensor& x, Mode) override {
        if (x.shape.size() != 2 || x.shape[1] != in_)
            detail::shape_error("dense", "expected (batch," + std::to_string(in_) + "), got " +
                                             x.shape_str());
        x_ = x;
        const std::size_t batch = x.shape[0];
        Tensor y({batch, out_});
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t o = 0; o < out_; ++o) {
                double acc = b_[o];
                const double* row = &x.data[b * in_];
                const double* wrow = &w_[o * in_];
                for (std::size_t i = 0; i < in_; ++i) acc += row[i] * wrow[i];
                y.data[b * out_ + o] = acc;
            }
        have_cache_ = true;
        return y;
    }

    Tensor backward(const Tensor& g) override {
        require_forward(have_cache_);
        const std::size_t batch = x_.shape[0];
        if (g.shape.size() != 2 || g.shape[0] != batch || g.shape[1] != out_)
            detail::shape_error("dense", "bad upstream gradient shape " + g.shape_str());
        Tensor gx({batch, in_});
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t o = 0; o < out_; ++o) {
                double go = g.data[b * out_ + o];
                gb_[o] += go;
                const double* row = &x_.data[b * in_];
                double* gwrow = &gw_[o * in_];
                double* gxrow = &gx.data[b * in_];
                const double* wrow = &w_[o * in_];
                for (std::size_t i = 0; i < in_; ++i) {
                    gwrow[i] += go * row[i];
                    gxrow[i] += go * wrow[i];
                }
            }
        return gx;
    }

    std::vector<ParamBlock> parameters() override {
        return {{"w", {out_, in_}, &w_, &gw_, true}, {"b", {out_}, &b_, &gb_, true}};
    }

private:
    std::size_t in_, out_;
    std::vector<double> w_, b_, gw_, gb_;
    Tensor x_;
    bool have_cache_ = false;
};

// ============================================================================
// Conv1D / Conv1DTranspose
// ============================================================================

/// Valid-padding 1-D convolution over (batch, length, channels) inputs.
/// Weight layout (filters, channels, kernel); output length (L-K)/stride + 1.
class Conv1D : public Layer {
public:
    Conv1D(std::size_t in_channels, std::size_t filters, std::size_t kernel, std::size_t stride,
           Rng& rng)
        : c_(in_channels), o_(filters), k_(kernel), s_(stride), w_(filters * in_channels * kernel),
          b_(filters, 0.0), gw_(w_.size(), 0.0), gb_(filters, 0.0) {
        if (kernel == 0 || stride == 0) detail::shape_error("conv1d", "kernel/stride must be >= 1");
        detail::init_uniform(w_, c_ * k_, o_ * k_, rng);
    }

    std::string kind() const override { return "conv1d"; }

    static std::size_t out_length(std::size_t in_length, std::size_t kernel, std::size_t stride) {
        return (in_length - kernel) / stride + 1;
    }

    Tensor forward(const Tensor& x, Mode) override {
        if (x.shape.size() != 3 || x.shape[2] != c_)
            detail::shape_error("conv1d", "expected (batch,length," + std::to_string(c_) +
                                              "), got " + x.shape_str());
        const std::size_t batch = x.shape[0], len = x.shape[1];
        if (len < k_) detail::shape_error("conv1d", "length " + std::to_string(len) +
                                                        " shorter than kernel " + std::to_string(k_));
        const std::size_t lout = out_length(len, k_, s_);
        x_ = x;
        Tensor y({batch, lout, o_});
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t j = 0; j < lout; ++j)
                for (std::size_t o = 0; o < o_; ++o) {
                    double acc = b_[o];
                    for (std::size_t c = 0; c < c_; ++c)
                        for (std::size_t k = 0; k < k_; ++k)
                            acc += x.data[(b * len + j * s_ + k) * c_ + c] *
                                   w_[(o * c_ + c) * k_ + k];
                    y.data[(b * lout + j) * o_ + o] = acc;
                }
        have_cache_ = true;
        return y;
    }

    Tensor backward(const Tensor& g) override {
        require_forward(have_cache_);
        const std::size_t batch = x_.shape[0], len = x_.shape[1];
        const std::size_t lout = out_length(len, k_, s_);
        if (g.shape != std::vector<std::size_t>{batch, lout, o_})
            detail::shape_error("conv1d", "bad upstream gradient shape " + g.shape_str());
        Tensor gx({batch, len, c_});
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t j = 0; j < lout; ++j)
                for (std::size_t o = 0; o < o_; ++o) {
                    double go = g.data[(b * lout + j) * o_ + o];
                    gb_[o] += go;
                    for (std::size_t c = 0; c < c_; ++c)
                        for (std::size_t k = 0; k < k_; ++k) {
                            std::size_t t = j * s_ + k;
                            gw_[(o * c_ + c) * k_ + k] += go * x_.data[(b * len + t) * c_ + c];
                            gx.data[(b * len + t) * c_ + c] += go * w_[(o * c_ + c) * k_ + k];
                        }
                }
        return gx;
    }

    std::vector<ParamBlock> parameters() override {
        return {{"w", {o_, c_, k_}, &w_, &gw_, true}, {"b", {o_}, &b_, &gb_, true}};
    }

private:
    std::size_t c_, o_, k_, s_;
    std::vector<double> w_, b_, gw_, gb_;
    Tensor x_;
    bool have_cache_ = false;
};

/// Adjoint-shaped transposed 1-D convolution. Weight layout (in_channels,
/// filters, kernel); output length (L-1)*stride + K.
class Conv1DTranspose : public Layer {
public:
    Conv1DTranspose(std::size_t in_channels, std::size_t filters, std::size_t kernel,
                    std::size_t stride, Rng& rng)
        : c_(in_channels), o_(filters), k_(kernel), s_(stride), w_(in_channels * filters * kernel),
          b_(filters, 0.0), gw_(w_.size(), 0.0), gb_(filters, 0.0) {
        if (kernel == 0 || stride == 0)
            detail::shape_error("conv1d_transpose", "kernel/stride must be >= 1");
        detail::init_uniform(w_, c_ * k_, o_ * k_, rng);
    }

    std::string kind() const override { return "conv1d_transpose"; }

    static std::size_t out_length(std::size_t in_length, std::size_t kernel, std::size_t stride) {
        return (in_length - 1) * stride + kernel;
    }

    Tensor forward(const Tensor& x, Mode) override {
        if (x.shape.size() != 3 || x.shape[2] != c_)
            detail::shape_error("conv1d_transpose", "expected (batch,length," + std::to_string(c_) +
                                                        "), got " + x.shape_str());
        const std::size_t batch = x.shape[0], len = x.shape[1];
        const std::size_t lout = out_length(len, k_, s_);
        x_ = x;
        Tensor y({batch, lout, o_});
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t t = 0; t < lout; ++t)
                for (std::size_t o = 0; o < o_; ++o) y.data[(b * lout + t) * o_ + o] = b_[o];
            for (std::size_t j = 0; j < len; ++j)
                for (std::size_t c = 0; c < c_; ++c) {
                    double xv = x.data[(b * len + j) * c_ + c];
                    for (std::size_t o = 0; o < o_; ++o)
                        for (std::size_t k = 0; k < k_; ++k)
                            y.data[(b * lout + j * s_ + k) * o_ + o] +=
                                xv * w_[(c * o_ + o) * k_ + k];
                }
        }
        have_cache_ = true;
        return y;
    }

    Tensor backward(const Tensor& g) override {
        require_forward(have_cache_);
        const std::size_t batch = x_.shape[0], len = x_.shape[1];
        const std::size_t lout = out_length(len, k_, s_);
        if (g.shape != std::vector<std::size_t>{batch, lout, o_})
            detail::shape_error("conv1d_transpose", "bad upstream gradient shape " + g.shape_str());
        Tensor gx({batch, len, c_});
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t t = 0; t < lout; ++t)
                for (std::size_t o = 0; o < o_; ++o) gb_[o] += g.data[(b * lout + t) * o_ + o];
            for (std::size_t j = 0; j < len; ++j)
                for (std::size_t c = 0; c < c_; ++c) {
                    double acc = 0.0;
                    double xv = x_.data[(b * len + j) * c_ + c];
                    for (std::size_t o = 0; o < o_; ++o)
                        for (std::size_t k = 0; k < k_; ++k) {
                            double go = g.data[(b * lout + j * s_ + k) * o_ + o];
                            acc += go * w_[(c * o_ + o) * k_ + k];
                            gw_[(c * o_ + o) * k_ + k] += go * xv;
                        }
                    gx.data[(b * len + j) * c_ + c] = acc;
                }
        }
        return gx;
    }

    std::vector<ParamBlock> parameters() override {
        return {{"w", {c_, o_, k_}, &w_, &gw_, true}, {"b", {o_}, &b_, &gb_, true}};
    }

private:
    std::size_t c_, o_, k_, s_;
    std::vector<double> w_, b_, gw_, gb_;
    Tensor x_;
    bool have_cache_ = false;
};

// ============================================================================
// BatchNorm
// ============================================================================

/// Normalizes the trailing axis over all leading axes. Train mode uses batch
/// statistics (biased variance) and updates running stats; infer mode uses
/// the running stats and never mutates.
class BatchNorm : public Layer {
public:
    explicit BatchNorm(std::size_t features, double momentum = 0.9, double eps = 1e-5)
        : f_(features), momentum_(momentum), eps_(eps), gamma_(features, 1.0), beta_(features, 0.0),
          ggamma_(features, 0.0), gbeta_(features, 0.0), run_mean_(features, 0.0),
          run_var_(features, 1.0) {}

    std::string kind() const override { return "batch_norm"; }

    Tensor forward(const Tensor& x, Mode mode) override {
        if (x.shape.empty() || x.shape.back() != f_)
            detail::shape_error("batch_norm", "expected trailing axis " + std::to_string(f_) +
                                                  ", got " + x.shape_str());
        const std::size_t rows = x.size() / f_;
        if (rows == 0) detail::shape_error("batch_norm", "empty input");
        Tensor y(x.shape);
        train_mode_ = (mode == Mode::train);
        if (train_mode_) {
            mean_.assign(f_, 0.0);
            inv_std_.assign(f_, 0.0);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t f = 0; f < f_; ++f) mean_[f] += x.data[r * f_ + f];
            for (std::size_t f = 0; f < f_; ++f) mean_[f] /= static_cast<double>(rows);
            std::vector<double> var(f_, 0.0);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t f = 0; f < f_; ++f) {
                    double d = x.data[r * f_ + f] - mean_[f];
                    var[f] += d * d;
                }
            for (std::size_t f = 0; f < f_; ++f) {
                var[f] /= static_cast<double>(rows);
                inv_std_[f] = 1.0 / std::sqrt(var[f] + eps_);
                run_mean_[f] = momentum_ * run_mean_[f] + (1.0 - momentum_) * mean_[f];
                run_var_[f] = momentum_ * run_var_[f] + (1.0 - momentum_) * var[f];
            }
            xhat_.assign(x.size(), 0.0);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t f = 0; f < f_; ++f) {
                    double xh = (x.data[r * f_ + f] - mean_[f]) * inv_std_[f];
                    xhat_[r * f_ + f] = xh;
                    y.data[r * f_ + f] = gamma_[f] * xh + beta_[f];
                }
        } else {
            xhat_.assign(x.size(), 0.0);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t f = 0; f < f_; ++f) {
                    double inv = 1.0 / std::sqrt(run_var_[f] + eps_);
                    double xh = (x.data[r * f_ + f] - run_mean_[f]) * inv;
                    xhat_[r * f_ + f] = xh;
                    y.data[r * f_ + f] = gamma_[f] * xh + beta_[f];
                }
        }
        shape_ = x.shape;
        have_cache_ = true;
        return y;
    }

    Tensor backward(const Tensor& g) override {
        require_forward(have_cache_);
        if (g.shape != shape_)
            detail::shape_error("batch_norm", "bad upstream gradient shape " + g.shape_str());
        const std::size_t rows = g.size() / f_;
        Tensor gx(shape_);
        if (!train_mode_) {
            // Infer mode is a per-feature affine map in x.
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t f = 0; f < f_; ++f) {
                    double inv = 1.0 / std::sqrt(run_var_[f] + eps_);
                    gx.data[r * f_ + f] = g.data[r * f_ + f] * gamma_[f] * inv;
                    ggamma_[f] += g.data[r * f_ + f] * xhat_[r * f_ + f];
                    gbeta_[f] += g.data[r * f_ + f];
                }
            return gx;
        }
        std::vector<double> sum_g(f_, 0.0), sum_gx(f_, 0.0);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t f = 0; f < f_; ++f) {
                double gv = g.data[r * f_ + f];
                sum_g[f] += gv;
                sum_gx[f] += gv * xhat_[r * f_ + f];
                gbeta_[f] += gv;
                ggamma_[f] += gv * xhat_[r * f_ + f];
            }
        const double n = static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t f = 0; f < f_; ++f) {
                double gv = g.data[r * f_ + f];
                gx.data[r * f_ + f] =
                    gamma_[f] * inv_std_[f] *
                    (gv - sum_g[f] / n - xhat_[r * f_ + f] * sum_gx[f] / n);
            }
        return gx;
    }

    std::vector<ParamBlock> parameters() override {
        return {{"gamma", {f_}, &gamma_, &ggamma_, true},
                {"beta", {f_}, &beta_, &gbeta_, true},
                {"running_mean", {f_}, &run_mean_, nullptr, false},
                {"running_var", {f_}, &run_var_, nullptr, false}};
    }

private:
    std::size_t f_;
    double momentum_, eps_;
    std::vector<double> gamma_, beta_, ggamma_, gbeta_, run_mean_, run_var_;
    std::vector<double> mean_, inv_std_, xhat_;
    std::vector<std::size_t> shape_;
    bool train_mode_ = true;
    bool have_cache_ = false;
};

// ============================================================================
// Activations and shape adapters
// ============================================================================

class Activation : public Layer {
public:
    Tensor forward(const Tensor& x, Mode) override {
        x_ = x;
        Tensor y(x.shape);
        for (std::size_t i = 0; i < x.size(); ++i) y.data[i] = apply(x.data[i]);
        have_cache_ = true;
        return y;
    }

    Tensor backward(const Tensor& g) override {
        require_forward(have_cache_);
        if (!g.same_shape(x_))
            detail::shape_error(kind(), "bad upstream gradient shape " + g.shape_str());
        Tensor gx(x_.shape);
        for (std::size_t i = 0; i < g.size(); ++i) gx.data[i] = g.data[i] * slope(x_.data[i]);
        return gx;
    }

protected:
    virtual double apply(double x) const = 0;
    virtual double slope(double x) const = 0;

private:
    Tensor x_;
    bool have_cache_ = false;
};

class ReLU : public Activation {
public:
    std::string kind() const override { return "relu"; }

protected:
    double apply(double x) const override { return x > 0.0 ? x : 0.0; }
    double slope(double x) const override { return x > 0.0 ? 1.0 : 0.0; }
};

class LeakyReLU : public Activation {
public:
    explicit LeakyReLU(double negative_slope = 0.2) : a_(negative_slope) {}
    std::string kind() const override { return "leaky_relu"; }
    double negative_slope() const { return a_; }

protected:
    double apply(double x) const override { return x >= 0.0 ? x : a_ * x; }
    double slope(double x) const override { return x >= 0.0 ? 1.0 : a_; }

private:
    double a_;
};

class Tanh : public Activation {
public:
    std::string kind() const override { return "tanh"; }

protected:
    double apply(double x) const override { return std::tanh(x); }
    double slope(double x) const override {
        double t = std::tanh(x);
        return 1.0 - t * t;
    }
};

class Sigmoid : public Activation {
public:
    std::string kind() const override { return "sigmoid"; }

protected:
    double apply(double x) const override { return 1.0 / (1.0 + std::exp(-x)); }
    double slope(double x) const override {
        double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 - s);
    }
};

/// (batch, ...) -> (batch, product-of-rest).
class Flatten : public Layer {
public:
    std::string kind() const override { return "flatten"; }

    Tensor forward(const Tensor& x, Mode) override {
        if (x.shape.size() < 2) detail::shape_error("flatten", "need rank >= 2, got " + x.shape_str());
        in_shape_ = x.shape;
        have_cache_ = true;
        return Tensor({x.shape[0], x.size() / x.shape[0]}, x.data);
    }

    Tensor backward(const Tensor& g) override {
        require_forward(have_cache_);
        if (g.size() != Tensor::numel(in_shape_))
            detail::shape_error("flatten", "bad upstream gradient shape " + g.shape_str());
        return Tensor(in_shape_, g.data);
    }

private:
    std::vector<std::size_t> in_shape_;
    bool have_cache_ = false;
};

/// (batch, product(tail)) -> (batch, tail...).
class Reshape : public Layer {
public:
    explicit Reshape(std::vector<std::size_t> tail) : tail_(std::move(tail)) {}

    std::string kind() const override { return "reshape"; }

    Tensor forward(const Tensor& x, Mode) override {
        if (x.shape.size() != 2 || x.shape[1] != Tensor::numel(tail_))
            detail::shape_error("reshape", "cannot reshape " + x.shape_str());
        in_shape_ = x.shape;
        std::vector<std::size_t> out{x.shape[0]};
        out.insert(out.end(), tail_.begin(), tail_.end());
        have_cache_ = true;
        return Tensor(out, x.data);
    }

    Tensor backward(const Tensor& g) override {
        require_forward(have_cache_);
        if (g.size() != Tensor::numel(in_shape_))
            detail::shape_error("reshape", "bad upstream gradient shape " + g.shape_str());
        return Tensor(in_shape_, g.data);
    }

private:
    std::vector<std::size_t> tail_;
    std::vector<std::size_t> in_shape_;
    bool have_cache_ = false;
};

}  // namespace latentstat
