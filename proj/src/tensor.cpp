#include "qlife/tensor.hpp"

#include <cmath>
#include <sstream>

#include "qlife/errors.hpp"

namespace qlife {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
}

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0f) {
    for (std::size_t d : shape_) {
        if (d == 0) throw EngineError("tensor extent must be positive, got shape " + shape_str());
    }
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<float> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
    if (shape_numel(shape_) != data_.size()) {
        throw EngineError("tensor shape " + shape_str() + " does not match value count " +
                          std::to_string(data_.size()));
    }
}

Tensor Tensor::full(std::vector<std::size_t> shape, float value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
}

Tensor Tensor::row(std::initializer_list<float> values) {
    return Tensor({values.size()}, std::vector<float>(values));
}

void Tensor::fill(float v) {
    for (float& x : data_) x = v;
}

Tensor Tensor::reshaped(std::vector<std::size_t> new_shape) const {
    if (shape_numel(new_shape) != data_.size()) {
        throw EngineError("cannot reshape tensor of " + std::to_string(data_.size()) +
                          " values to incompatible shape");
    }
    return Tensor(std::move(new_shape), data_);
}

bool Tensor::all_finite() const {
    for (float x : data_) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

void Tensor::require_finite(const std::string& context) const {
    if (!all_finite()) {
        throw EngineError("non-finite value in " + context);
    }
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << "x";
        os << shape_[i];
    }
    os << "]";
    return os.str();
}

}  // namespace qlife
