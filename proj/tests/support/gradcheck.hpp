#pragma once

// Central finite-difference gradient checking against analytic backward
// passes. The scalar under test is a fixed random projection of the layer
// output, so every output coordinate participates.

#include <cmath>
#include <functional>
#include <vector>

#include "ecgdx/tensor.hpp"
#include "ecgdx/util.hpp"

namespace gradcheck {

struct Target {
    ecgdx::nn::Tensor* tensor;          // coordinates to perturb
    std::vector<double> analytic;       // analytic gradient, aligned with tensor->data
};

// Max relative error over sampled coordinates; error metric
// |a - fd| / max(1, |a|, |fd|).
inline double max_rel_error(const std::function<double()>& scalar_forward,
                            std::vector<Target>& targets, ecgdx::Rng& rng,
                            int coords_per_tensor = 10, double h0 = 1e-5) {
    double worst = 0.0;
    for (auto& tgt : targets) {
        const std::size_t n = tgt.tensor->data.size();
        const int samples = std::min<std::size_t>(coords_per_tensor, n);
        for (int s = 0; s < samples; ++s) {
            const std::size_t j = static_cast<std::size_t>(rng.uniform_int(n));
            double& coord = tgt.tensor->data[j];
            const double orig = coord;
            const double h = h0 * std::max(1.0, std::abs(orig));
            coord = orig + h;
            const double fp = scalar_forward();
            coord = orig - h;
            const double fm = scalar_forward();
            coord = orig;
            const double fd = (fp - fm) / (2.0 * h);
            const double an = tgt.analytic[j];
            const double err = std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
            worst = std::max(worst, err);
        }
    }
    return worst;
}

inline ecgdx::nn::Tensor random_tensor(std::vector<std::size_t> shape, ecgdx::Rng& rng,
                                       double sd = 1.0) {
    auto t = ecgdx::nn::Tensor::zeros(std::move(shape));
    for (auto& v : t.data) v = rng.normal(0.0, sd);
    return t;
}

inline double project(const ecgdx::nn::Tensor& out, const std::vector<double>& w) {
    double acc = 0.0;
    for (std::size_t i = 0; i < out.data.size(); ++i) acc += w[i] * out.data[i];
    return acc;
}

}  // namespace gradcheck
