#pragma once

#include <vector>

#include "qlife/tensor.hpp"

namespace qlife {

// SGD with optional momentum: v <- momentum*v + g, p <- p - lr*v.
class SgdOptimizer {
public:
    explicit SgdOptimizer(float learning_rate, float momentum = 0.0f);

    void step(const std::vector<Tensor*>& params, const std::vector<Tensor*>& grads);

    float learning_rate() const { return lr_; }
    void set_learning_rate(float lr) { lr_ = lr; }
    float momentum() const { return momentum_; }

private:
    float lr_, momentum_;
    std::vector<Tensor> velocity_;
};

class AdamOptimizer {
public:
    explicit AdamOptimizer(float learning_rate, float beta1 = 0.9f, float beta2 = 0.999f,
                           float eps = 1e-8f);

    void step(const std::vector<Tensor*>& params, const std::vector<Tensor*>& grads);

    float learning_rate() const { return lr_; }
    void set_learning_rate(float lr) { lr_ = lr; }

private:
    float lr_, beta1_, beta2_, eps_;
    long step_count_ = 0;
    std::vector<Tensor> m_, v_;
};

// Dispatches to SGD or Adam based on a config string ("sgd" | "adam").
class Optimizer {
public:
    Optimizer(const std::string& kind, float learning_rate, float momentum);

    void step(const std::vector<Tensor*>& params, const std::vector<Tensor*>& grads);
    void set_learning_rate(float lr);

private:
    bool use_adam_;
    SgdOptimizer sgd_;
    AdamOptimizer adam_;
};

}  // namespace qlife
