#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "latentstat/tensor.hpp"

namespace latentstat {

/// Adam with bias correction. Non-finite gradients abort the step: silently
/// clipping them would hide a diverging model.
class Adam {
public:
    explicit Adam(std::vector<ParamBlock> blocks, double lr = 1e-4, double beta1 = 0.9,
                  double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
        for (auto& b : blocks) {
            if (!b.trainable) continue;
            if (!b.grad) throw std::invalid_argument("adam: block '" + b.name + "' has no gradient");
            blocks_.push_back(b);
            m_.emplace_back(b.value->size(), 0.0);
            v_.emplace_back(b.value->size(), 0.0);
        }
    }

    long step_count() const { return step_; }
    double learning_rate() const { return lr_; }

    void step() {
        ++step_;
        double bc1 = 1.0 - std::pow(b1_, static_cast<double>(step_));
        double bc2 = 1.0 - std::pow(b2_, static_cast<double>(step_));
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            std::vector<double>& p = *blocks_[i].value;
            const std::vector<double>& g = *blocks_[i].grad;
            std::vector<double>& m = m_[i];
            std::vector<double>& v = v_[i];
            for (std::size_t j = 0; j < p.size(); ++j) {
                if (!std::isfinite(g[j]))
                    throw std::runtime_error("adam: non-finite gradient in block '" +
                                             blocks_[i].name + "'");
                m[j] = b1_ * m[j] + (1.0 - b1_) * g[j];
                v[j] = b2_ * v[j] + (1.0 - b2_) * g[j] * g[j];
                double mhat = m[j] / bc1;
                double vhat = v[j] / bc2;
                p[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

private:
    double lr_, b1_, b2_, eps_;
    long step_ = 0;
    std::vector<ParamBlock> blocks_;
    std::vector<std::vector<double>> m_, v_;
};

}  // namespace latentstat
