#include "qlife/losses.hpp"

#include <cmath>
#include <string>

#include "qlife/errors.hpp"

namespace qlife {

Loss cross_entropy_weighted(const Tensor& logits, std::span<const int> labels,
                            std::span<const double> row_weights) {
    if (logits.rank() != 2) {
        throw EngineError("cross_entropy: logits must be [batch, classes], got " + logits.shape_str());
    }
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    if (labels.size() != n || row_weights.size() != n) {
        throw EngineError("cross_entropy: label/weight count does not match batch size");
    }
    Loss out;
    out.grad = Tensor({n, k});
    std::vector<double> probs(k);
    for (std::size_t i = 0; i < n; ++i) {
        const double w = row_weights[i];
        if (w == 0.0) continue;
        const int label = labels[i];
        if (label < 0 || static_cast<std::size_t>(label) >= k) {
            throw EngineError("cross_entropy: label " + std::to_string(label) + " out of range [0, " +
                              std::to_string(k) + ") at row " + std::to_string(i));
        }
        const float* row = logits.data() + i * k;
        double mx = row[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double denom = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            probs[j] = std::exp(row[j] - mx);
            denom += probs[j];
        }
        out.value += w * (std::log(denom) - (row[label] - mx));
        float* grow = out.grad.data() + i * k;
        for (std::size_t j = 0; j < k; ++j) {
            grow[j] = static_cast<float>(w * (probs[j] / denom - (static_cast<std::size_t>(label) == j ? 1.0 : 0.0)));
        }
    }
    return out;
}

Loss cross_entropy(const Tensor& logits, std::span<const int> labels) {
    const std::size_t n = logits.rank() == 2 ? logits.dim(0) : 0;
    std::vector<double> weights(n, n ? 1.0 / static_cast<double>(n) : 0.0);
    return cross_entropy_weighted(logits, labels, weights);
}

PairLoss scl_loss(const Tensor& z1, const Tensor& z2) {
    Tensor a = z1.rank() == 1 ? z1.reshaped({1, z1.size()}) : z1;
    Tensor b = z2.rank() == 1 ? z2.reshaped({1, z2.size()}) : z2;
    if (a.rank() != 2 || !a.same_shape(b)) {
        throw EngineError("scl_loss: embeddings must share shape [batch, dim]");
    }
    const std::size_t n = a.dim(0), d = a.dim(1);
    PairLoss out;
    out.grad_a = Tensor(z1.shape());
    out.grad_b = Tensor(z2.shape());
    const double inv_nd = 1.0 / static_cast<double>(n * d);
    std::vector<double> ua(d), ub(d), diff(d);
    for (std::size_t i = 0; i < n; ++i) {
        const float* xa = a.data() + i * d;
        const float* xb = b.data() + i * d;
        double na = 0.0, nb = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            na += static_cast<double>(xa[j]) * xa[j];
            nb += static_cast<double>(xb[j]) * xb[j];
        }
        na = std::sqrt(na);
        nb = std::sqrt(nb);
        if (na < 1e-12 || nb < 1e-12) {
            throw EngineError("scl_loss: zero-norm embedding at row " + std::to_string(i) +
                              " (collapsed representation)");
        }
        for (std::size_t j = 0; j < d; ++j) {
            ua[j] = xa[j] / na;
            ub[j] = xb[j] / nb;
            diff[j] = ua[j] - ub[j];
            out.value += diff[j] * diff[j] * inv_nd;
        }
        // d/dz of u = z/|z| is (g - (g.u) u) / |z| applied to g = dL/du.
        double dot_a = 0.0, dot_b = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            dot_a += 2.0 * inv_nd * diff[j] * ua[j];
            dot_b += -2.0 * inv_nd * diff[j] * ub[j];
        }
        float* ga = out.grad_a.data() + i * d;
        float* gb = out.grad_b.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) {
            ga[j] = static_cast<float>((2.0 * inv_nd * diff[j] - dot_a * ua[j]) / na);
            gb[j] = static_cast<float>((-2.0 * inv_nd * diff[j] - dot_b * ub[j]) / nb);
        }
    }
    return out;
}

}  // namespace qlife
