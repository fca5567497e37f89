#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace qlife {

// Dense row-major float tensor. All layer math runs on these; accumulations
// that benefit from extra precision are done in double inside the layers.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<float> values);

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<std::size_t> shape, float value);
    static Tensor row(std::initializer_list<float> values);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_[axis]; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    std::vector<float>& values() { return data_; }
    const std::vector<float>& values() const { return data_; }

    void fill(float v);
    Tensor reshaped(std::vector<std::size_t> new_shape) const;
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    bool all_finite() const;
    // Throws EngineError naming `context` if any value is NaN or infinite.
    void require_finite(const std::string& context) const;

    std::string shape_str() const;

private:
    std::vector<std::size_t> shape_;
    std::vector<float> data_;
};

std::size_t shape_numel(const std::vector<std::size_t>& shape);

}  // namespace qlife
