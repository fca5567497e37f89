#pragma once

#include <span>
#include <vector>

#include "qlife/tensor.hpp"

namespace qlife {

struct Loss {
    double value = 0.0;
    Tensor grad;  // d value / d logits
};

// Mean negative log-softmax of the true class over [batch, classes] logits.
// Gradient rows are (softmax - onehot) / batch. Softmax uses max-subtraction.
Loss cross_entropy(const Tensor& logits, std::span<const int> labels);

// Row-weighted variant: value = sum_i w_i * nll_i, gradient row i scaled by
// w_i. Rows with w_i == 0 contribute nothing (their labels are ignored and
// may be -1). Used to mix differently-weighted sub-batches in one pass.
Loss cross_entropy_weighted(const Tensor& logits, std::span<const int> labels,
                            std::span<const double> row_weights);

struct PairLoss {
    double value = 0.0;
    Tensor grad_a, grad_b;
};

// Scale consistency loss: MSE between the L2-normalized rows of z1 and z2.
// Invariant under per-row positive rescaling of either argument; gradients
// flow through the normalization. Rows must have nonzero norm.
PairLoss scl_loss(const Tensor& z1, const Tensor& z2);

}  // namespace qlife
