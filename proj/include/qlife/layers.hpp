#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "qlife/rng.hpp"
#include "qlife/tensor.hpp"

namespace qlife {

enum class Mode { train, eval };

// Base of the reverse-mode layer hierarchy.
//
// forward() caches whatever backward() needs and remembers the mode it ran
// in; backward() consumes that cache. infer() is the pure evaluation path:
// const, no caching, no RNG draws, safe to call concurrently on a shared
// network.
class Layer {
public:
    virtual ~Layer() = default;

    virtual const char* kind() const = 0;

    Tensor forward(const Tensor& input, Mode mode);
    virtual Tensor infer(const Tensor& input) const = 0;
    virtual Tensor backward(const Tensor& grad_output) = 0;

    virtual std::vector<Tensor*> params() { return {}; }
    virtual std::vector<Tensor*> grads() { return {}; }
    // Non-trainable buffers that still belong in a checkpoint (e.g. running
    // batch-norm statistics).
    virtual std::vector<Tensor*> state() { return {}; }

    virtual void reseed(std::uint64_t /*seed*/) {}
    virtual std::unique_ptr<Layer> clone() const = 0;

    void zero_grads();

protected:
    // Train-mode forward; implementations fill their caches here.
    virtual Tensor train_forward(const Tensor& input) = 0;
    // Eval-mode forward that still records what backward needs. Defaults to
    // infer(); stateful layers override when their eval gradient differs.
    virtual Tensor eval_forward_cached(const Tensor& input);

    void require_cache(const char* op) const;

    bool has_cache_ = false;
    Mode cached_mode_ = Mode::train;
};

class Dense final : public Layer {
public:
    Dense(std::size_t in_features, std::size_t out_features);

    const char* kind() const override { return "dense"; }
    Tensor infer(const Tensor& input) const override;
    Tensor backward(const Tensor& grad_output) override;
    std::vector<Tensor*> params() override { return {&weight_, &bias_}; }
    std::vector<Tensor*> grads() override { return {&grad_weight_, &grad_bias_}; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }

    void init_kaiming(Rng& rng);

    std::size_t in_features() const { return in_; }
    std::size_t out_features() const { return out_; }
    Tensor& weight() { return weight_; }
    Tensor& bias() { return bias_; }
    const Tensor& weight() const { return weight_; }
    const Tensor& bias() const { return bias_; }

protected:
    Tensor train_forward(const Tensor& input) override;
    Tensor eval_forward_cached(const Tensor& input) override;

private:
    std::size_t in_, out_;
    Tensor weight_;       // [out, in]
    Tensor bias_;         // [out]
    Tensor grad_weight_, grad_bias_;
    Tensor cached_input_;
};

class Relu final : public Layer {
public:
    const char* kind() const override { return "relu"; }
    Tensor infer(const Tensor& input) const override;
    Tensor backward(const Tensor& grad_output) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Relu>(*this); }

protected:
    Tensor train_forward(const Tensor& input) override;
    Tensor eval_forward_cached(const Tensor& input) override;

private:
    Tensor cached_input_;
};

// Inverted dropout: train-mode activations are scaled by 1/(1-rate) so that
// eval mode is a plain identity.
class Dropout final : public Layer {
public:
    explicit Dropout(float rate, std::uint64_t seed = 0);

    const char* kind() const override { return "dropout"; }
    Tensor infer(const Tensor& input) const override { return input; }
    Tensor backward(const Tensor& grad_output) override;
    void reseed(std::uint64_t seed) override { rng_ = Rng(seed); }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Dropout>(*this); }

    float rate() const { return rate_; }

protected:
    Tensor train_forward(const Tensor& input) override;
    Tensor eval_forward_cached(const Tensor& input) override;

private:
    float rate_;
    Rng rng_;
    Tensor mask_;
};

// 1-D batch normalization over [batch, features] inputs.
class BatchNorm1d final : public Layer {
public:
    explicit BatchNorm1d(std::size_t features, float eps = 1e-5f, float momentum = 0.1f);

    const char* kind() const override { return "batchnorm1d"; }
    Tensor infer(const Tensor& input) const override;
    Tensor backward(const Tensor& grad_output) override;
    std::vector<Tensor*> params() override { return {&gamma_, &beta_}; }
    std::vector<Tensor*> grads() override { return {&grad_gamma_, &grad_beta_}; }
    std::vector<Tensor*> state() override { return {&running_mean_, &running_var_}; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNorm1d>(*this); }

    std::size_t features() const { return features_; }
    float eps() const { return eps_; }
    float momentum() const { return momentum_; }

    // Frozen-stats mode: train-mode forward normalizes with the running
    // statistics and leaves them untouched; gamma/beta still train. Used for
    // few-shot fine-tuning, where per-batch statistics are too noisy.
    void set_freeze_stats(bool freeze) { freeze_stats_ = freeze; }
    bool freeze_stats() const { return freeze_stats_; }

protected:
    Tensor train_forward(const Tensor& input) override;
    Tensor eval_forward_cached(const Tensor& input) override;

private:
    std::size_t features_;
    float eps_, momentum_;
    bool freeze_stats_ = false;
    Tensor gamma_, beta_;
    Tensor grad_gamma_, grad_beta_;
    Tensor running_mean_, running_var_;
    Tensor cached_norm_;       // normalized pre-affine activations
    std::vector<double> cached_inv_std_;
    bool cached_frozen_ = false;
};

class Conv2d final : public Layer {
public:
    Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
           std::size_t stride = 1, std::size_t padding = 0);

    const char* kind() const override { return "conv2d"; }
    Tensor infer(const Tensor& input) const override;
    Tensor backward(const Tensor& grad_output) override;
    std::vector<Tensor*> params() override { return {&weight_, &bias_}; }
    std::vector<Tensor*> grads() override { return {&grad_weight_, &grad_bias_}; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }

    void init_kaiming(Rng& rng);

    std::size_t in_channels() const { return in_ch_; }
    std::size_t out_channels() const { return out_ch_; }
    std::size_t kernel() const { return kernel_; }
    std::size_t stride() const { return stride_; }
    std::size_t padding() const { return padding_; }
    Tensor& weight() { return weight_; }
    Tensor& bias() { return bias_; }

protected:
    Tensor train_forward(const Tensor& input) override;
    Tensor eval_forward_cached(const Tensor& input) override;

private:
    std::size_t in_ch_, out_ch_, kernel_, stride_, padding_;
    Tensor weight_;   // [out_ch, in_ch, k, k]
    Tensor bias_;     // [out_ch]
    Tensor grad_weight_, grad_bias_;
    Tensor cached_input_;
};

// Pools [n, c, h, w] down to [n, c, bins_h, bins_w]; each output cell is the
// mean over its input region with the floor/ceil boundary rule
// start = floor(i*h/bins), end = ceil((i+1)*h/bins).
class AdaptiveAvgPool2d final : public Layer {
public:
    AdaptiveAvgPool2d(std::size_t bins_h, std::size_t bins_w);

    const char* kind() const override { return "adaptive-avg-pool"; }
    Tensor infer(const Tensor& input) const override;
    Tensor backward(const Tensor& grad_output) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<AdaptiveAvgPool2d>(*this); }

    std::size_t bins_h() const { return bins_h_; }
    std::size_t bins_w() const { return bins_w_; }

protected:
    Tensor train_forward(const Tensor& input) override;
    Tensor eval_forward_cached(const Tensor& input) override;

private:
    std::size_t bins_h_, bins_w_;
    std::vector<std::size_t> cached_in_shape_;
};

// Spatial pyramid pooling: adaptive-average-pools the feature map at each
// pyramid level, flattens and concatenates. Output width is
// channels * sum(level^2) regardless of the input's spatial size.
class SpatialPyramidPool final : public Layer {
public:
    explicit SpatialPyramidPool(std::vector<int> levels);

    const char* kind() const override { return "spp"; }
    Tensor infer(const Tensor& input) const override;
    Tensor backward(const Tensor& grad_output) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<SpatialPyramidPool>(*this); }

    const std::vector<int>& levels() const { return levels_; }
    std::size_t bins_total() const;                  // sum of level^2
    std::size_t output_dim(std::size_t channels) const { return channels * bins_total(); }

protected:
    Tensor train_forward(const Tensor& input) override;
    Tensor eval_forward_cached(const Tensor& input) override;

private:
    std::vector<int> levels_;
    std::vector<std::size_t> cached_in_shape_;
};

// Gradient reversal: identity forward, grad_in = -lambda * grad_out.
class GradientReversal final : public Layer {
public:
    explicit GradientReversal(float lambda = 1.0f) : lambda_(lambda) {}

    const char* kind() const override { return "grl"; }
    Tensor infer(const Tensor& input) const override { return input; }
    Tensor backward(const Tensor& grad_output) override;
    std::unique_ptr<Layer> clone() const override { return std::make_unique<GradientReversal>(*this); }

    float lambda() const { return lambda_; }
    void set_lambda(float lambda) { lambda_ = lambda; }

protected:
    Tensor train_forward(const Tensor& input) override { return input; }
    Tensor eval_forward_cached(const Tensor& input) override { return input; }

private:
    float lambda_;
};

// An ordered layer stack with reverse-mode composition.
class Network {
public:
    Network() = default;
    Network(const Network& other);
    Network& operator=(const Network& other);
    Network(Network&&) = default;
    Network& operator=(Network&&) = default;

    Layer& add(std::unique_ptr<Layer> layer);

    template <class L, class... Args>
    L& emplace(Args&&... args) {
        return static_cast<L&>(add(std::make_unique<L>(std::forward<Args>(args)...)));
    }

    Tensor forward(const Tensor& input, Mode mode);
    Tensor infer(const Tensor& input) const;
    // Propagates `grad_output` back through every layer, filling gradient
    // buffers; returns the gradient w.r.t. the network input.
    Tensor backward(const Tensor& grad_output);

    std::vector<Tensor*> params();
    std::vector<Tensor*> grads();
    std::vector<Tensor*> state();
    void zero_grads();
    void reseed(std::uint64_t seed);

    std::size_t size() const { return layers_.size(); }
    bool empty() const { return layers_.empty(); }
    Layer& layer(std::size_t i) { return *layers_[i]; }
    const Layer& layer(std::size_t i) const { return *layers_[i]; }

private:
    std::vector<std::unique_ptr<Layer>> layers_;
};

// FNV-1a over the raw bytes of every parameter tensor; used for freeze
// integrity checks and bit-exact round-trip assertions.
std::uint64_t params_checksum(const std::vector<Tensor*>& params);

}  // namespace qlife
