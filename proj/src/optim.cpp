#include "qlife/optim.hpp"

#include <cmath>
#include <string>

#include "qlife/errors.hpp"

namespace qlife {

SgdOptimizer::SgdOptimizer(float learning_rate, float momentum) : lr_(learning_rate), momentum_(momentum) {
    if (learning_rate <= 0.0f) throw EngineError("learning rate must be positive");
    if (momentum < 0.0f || momentum >= 1.0f) throw EngineError("momentum must be in [0, 1)");
}

void SgdOptimizer::step(const std::vector<Tensor*>& params, const std::vector<Tensor*>& grads) {
    if (params.size() != grads.size()) {
        throw EngineError("optimizer: parameter/gradient count mismatch");
    }
    if (velocity_.empty()) {
        velocity_.reserve(params.size());
        for (const Tensor* p : params) velocity_.emplace_back(p->shape());
    }
    if (velocity_.size() != params.size()) {
        throw EngineError("optimizer: parameter set changed between steps");
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = *params[k];
        const Tensor& g = *grads[k];
        Tensor& v = velocity_[k];
        if (!p.same_shape(g) || !p.same_shape(v)) {
            throw EngineError("optimizer: shape mismatch for parameter " + std::to_string(k));
        }
        g.require_finite("gradient for parameter " + std::to_string(k));
        for (std::size_t i = 0; i < p.size(); ++i) {
            v[i] = momentum_ * v[i] + g[i];
            p[i] -= lr_ * v[i];
        }
    }
}

AdamOptimizer::AdamOptimizer(float learning_rate, float beta1, float beta2, float eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (learning_rate <= 0.0f) throw EngineError("learning rate must be positive");
}

void AdamOptimizer::step(const std::vector<Tensor*>& params, const std::vector<Tensor*>& grads) {
    if (params.size() != grads.size()) {
        throw EngineError("optimizer: parameter/gradient count mismatch");
    }
    if (m_.empty()) {
        for (const Tensor* p : params) {
            m_.emplace_back(p->shape());
            v_.emplace_back(p->shape());
        }
    }
    if (m_.size() != params.size()) {
        throw EngineError("optimizer: parameter set changed between steps");
    }
    ++step_count_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = *params[k];
        const Tensor& g = *grads[k];
        g.require_finite("gradient for parameter " + std::to_string(k));
        for (std::size_t i = 0; i < p.size(); ++i) {
            m_[k][i] = beta1_ * m_[k][i] + (1.0f - beta1_) * g[i];
            v_[k][i] = beta2_ * v_[k][i] + (1.0f - beta2_) * g[i] * g[i];
            const double mh = m_[k][i] / bc1;
            const double vh = v_[k][i] / bc2;
            p[i] -= static_cast<float>(lr_ * mh / (std::sqrt(vh) + eps_));
        }
    }
}

Optimizer::Optimizer(const std::string& kind, float learning_rate, float momentum)
    : use_adam_(kind == "adam"),
      sgd_(learning_rate, momentum),
      adam_(learning_rate) {
    if (kind != "sgd" && kind != "adam") {
        throw EngineError("unknown optimizer '" + kind + "' (expected sgd or adam)");
    }
}

void Optimizer::step(const std::vector<Tensor*>& params, const std::vector<Tensor*>& grads) {
    if (use_adam_) {
        adam_.step(params, grads);
    } else {
        sgd_.step(params, grads);
    }
}

void Optimizer::set_learning_rate(float lr) {
    sgd_.set_learning_rate(lr);
    adam_.set_learning_rate(lr);
}

}  // namespace qlife
