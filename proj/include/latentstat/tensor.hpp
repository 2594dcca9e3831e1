#pragma once

#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace latentstat {

/// Dense row-major array of doubles. Shape is a plain dimension list; all
/// index math lives in the layers that own the layout conventions.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)), data(numel(shape), 0.0) {}
    Tensor(std::vector<std::size_t> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != numel(shape)) throw std::invalid_argument("Tensor: shape/buffer mismatch");
    }

    static std::size_t numel(const std::vector<std::size_t>& s) {
        return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
    }

    std::size_t size() const { return data.size(); }
    double* begin() { return data.data(); }
    double* end() { return data.data() + data.size(); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::string s = "(";
        for (std::size_t i = 0; i < shape.size(); ++i)
            s += (i ? "," : "") + std::to_string(shape[i]);
        return s + ")";
    }
};

/// Named slice of a layer's parameter storage. `trainable` separates learned
/// weights from serialized-but-frozen state (BatchNorm running statistics).
struct ParamBlock {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double>* value = nullptr;
    std::vector<double>* grad = nullptr;
    bool trainable = true;
};

}  // namespace latentstat
