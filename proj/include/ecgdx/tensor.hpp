#pragma once

// Minimal dense tensor (rank <= 3, doubles) with an optional gradient
// buffer. Layers index the flat storage directly; the at() helpers exist for
// tests and small code paths.

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace ecgdx::nn {

struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty, or same size as data

    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape) {
        Tensor t;
        t.shape = std::move(shape);
        t.data.assign(t.count(), 0.0);
        return t;
    }

    std::size_t count() const {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }

    std::size_t rank() const { return shape.size(); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }

    void zero_grad() { grad.assign(data.size(), 0.0); }

    double& at(std::size_t i) { return data[i]; }
    double at(std::size_t i) const { return data[i]; }

    double& at(std::size_t i, std::size_t j) {
        check_rank(2);
        return data[i * shape[1] + j];
    }
    double at(std::size_t i, std::size_t j) const {
        check_rank(2);
        return data[i * shape[1] + j];
    }

    double& at(std::size_t i, std::size_t j, std::size_t k) {
        check_rank(3);
        return data[(i * shape[1] + j) * shape[2] + k];
    }
    double at(std::size_t i, std::size_t j, std::size_t k) const {
        check_rank(3);
        return data[(i * shape[1] + j) * shape[2] + k];
    }

private:
    void check_rank(std::size_t r) const {
        if (shape.size() != r) throw std::logic_error("tensor rank mismatch");
    }
};

}  // namespace ecgdx::nn
