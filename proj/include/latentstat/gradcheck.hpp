#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "latentstat/tensor.hpp"

namespace latentstat {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_block;
    std::size_t worst_index = 0;
    std::size_t checked = 0;

    bool passed(double tolerance = 1e-4) const { return max_rel_err < tolerance; }
};

/// Central-difference gradient verification. The caller runs forward+backward
/// once so the blocks hold analytic gradients, then hands over a pure loss
/// evaluator; every trainable element is perturbed by +-eps and compared.
/// The relative-error denominator is floored so near-zero gradients compare
/// absolutely.
inline GradCheckReport grad_check(const std::vector<ParamBlock>& blocks,
                                  const std::function<double()>& loss_fn, double eps = 1e-5) {
    GradCheckReport report;
    for (const auto& block : blocks) {
        if (!block.trainable || !block.grad) continue;
        std::vector<double>& p = *block.value;
        const std::vector<double>& g = *block.grad;
        for (std::size_t j = 0; j < p.size(); ++j) {
            double saved = p[j];
            p[j] = saved + eps;
            double up = loss_fn();
            p[j] = saved - eps;
            double down = loss_fn();
            p[j] = saved;
            double fd = (up - down) / (2.0 * eps);
            double denom = std::max({std::abs(fd), std::abs(g[j]), 1e-6});
            double rel = std::abs(fd - g[j]) / denom;
            ++report.checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_block = block.name;
                report.worst_index = j;
            }
        }
    }
    return report;
}

}  // namespace latentstat
