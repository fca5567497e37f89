#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "qlife/layers.hpp"
#include "qlife/rng.hpp"
#include "qlife/tensor.hpp"

namespace testutil {

// Relative error with a unit floor: behaves as absolute tolerance for
// sub-unit magnitudes and relative above, the usual gradcheck convention.
inline double rel_err(double analytic, double numeric) {
    const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1.0});
    return std::fabs(analytic - numeric) / denom;
}

// Central finite differences of `eval` w.r.t. every entry of `param`,
// compared against `analytic` (same shape). Returns the worst rel_err.
// `eval` must recompute the scalar objective from scratch, deterministically.
inline double fd_check(qlife::Tensor& param, const qlife::Tensor& analytic,
                       const std::function<double()>& eval, double epsilon) {
    double worst = 0.0;
    for (std::size_t i = 0; i < param.size(); ++i) {
        const float saved = param[i];
        param[i] = saved + static_cast<float>(epsilon);
        const double up = eval();
        const double up_at = param[i];
        param[i] = saved - static_cast<float>(epsilon);
        const double down = eval();
        const double down_at = param[i];
        param[i] = saved;
        // Divide by the stored perturbation, not the requested one; float32
        // quantizes the +-epsilon step.
        const double numeric = (up - down) / (up_at - down_at);
        worst = std::max(worst, rel_err(analytic[i], numeric));
    }
    return worst;
}

// Deterministic "loss" for layer-level gradient checks: a fixed random
// weighting of the outputs, so dL/dy is simply the weight tensor.
struct WeightedSum {
    qlife::Tensor weights;
    explicit WeightedSum(const std::vector<std::size_t>& shape, qlife::Rng& rng)
        : weights(shape) {
        for (std::size_t i = 0; i < weights.size(); ++i) {
            weights[i] = rng.uniform_f(-1.0f, 1.0f);
        }
    }
    double value(const qlife::Tensor& y) const {
        double acc = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) acc += static_cast<double>(weights[i]) * y[i];
        return acc;
    }
};

inline qlife::Tensor random_tensor(const std::vector<std::size_t>& shape, qlife::Rng& rng,
                                   float lo = -1.0f, float hi = 1.0f) {
    qlife::Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform_f(lo, hi);
    return t;
}

// Isotropic Gaussian cloud [n, d] centered at `mean`.
inline qlife::Tensor gaussian_cloud(std::size_t n, const std::vector<double>& mean, double stddev,
                                    qlife::Rng& rng) {
    const std::size_t d = mean.size();
    qlife::Tensor t({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            t[i * d + j] = static_cast<float>(rng.normal(mean[j], stddev));
        }
    }
    return t;
}

// Test-local Fisher criterion, independent of the library implementation:
// standardizes both sets with the given stats, projects on the (normalized)
// direction and returns (mean gap)^2 / pooled variance.
inline double naive_fisher_ratio(const qlife::Tensor& c1, const qlife::Tensor& c2,
                                 const std::vector<double>& feat_mean,
                                 const std::vector<double>& feat_std,
                                 std::vector<double> direction) {
    const std::size_t d = direction.size();
    double norm = 0.0;
    for (double v : direction) norm += v * v;
    norm = std::sqrt(norm);
    for (double& v : direction) v /= norm;
    auto project_all = [&](const qlife::Tensor& t) {
        std::vector<double> out(t.dim(0));
        for (std::size_t i = 0; i < t.dim(0); ++i) {
            double p = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                p += direction[j] * ((t[i * d + j] - feat_mean[j]) / feat_std[j]);
            }
            out[i] = p;
        }
        return out;
    };
    auto stats = [](const std::vector<double>& xs) {
        double mean = 0.0;
        for (double x : xs) mean += x;
        mean /= static_cast<double>(xs.size());
        double var = 0.0;
        for (double x : xs) var += (x - mean) * (x - mean);
        var /= static_cast<double>(xs.size() - 1);
        return std::pair<double, double>(mean, var);
    };
    const std::vector<double> p1 = project_all(c1), p2 = project_all(c2);
    const auto [m1, v1] = stats(p1);
    const auto [m2, v2] = stats(p2);
    const double pooled = (static_cast<double>(p1.size() - 1) * v1 +
                           static_cast<double>(p2.size() - 1) * v2) /
                          static_cast<double>(p1.size() + p2.size() - 2);
    return (m1 - m2) * (m1 - m2) / std::max(pooled, 1e-300);
}

}  // namespace testutil
