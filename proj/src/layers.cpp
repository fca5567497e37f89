#include "qlife/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "qlife/errors.hpp"

namespace qlife {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* kind) {
    if (t.rank() != rank) {
        throw EngineError(std::string(kind) + ": expected rank-" + std::to_string(rank) +
                          " input, got shape " + t.shape_str());
    }
}

// Boundary rule shared by adaptive pooling and SPP.
inline std::size_t region_start(std::size_t i, std::size_t extent, std::size_t bins) {
    return (i * extent) / bins;
}
inline std::size_t region_end(std::size_t i, std::size_t extent, std::size_t bins) {
    return ((i + 1) * extent + bins - 1) / bins;
}

}  // namespace

// ---------------------------------------------------------------- Layer

Tensor Layer::forward(const Tensor& input, Mode mode) {
    input.require_finite(std::string(kind()) + " input");
    Tensor out = (mode == Mode::train) ? train_forward(input) : eval_forward_cached(input);
    has_cache_ = true;
    cached_mode_ = mode;
    out.require_finite(std::string(kind()) + " output");
    return out;
}

Tensor Layer::eval_forward_cached(const Tensor& input) { return infer(input); }

void Layer::require_cache(const char* op) const {
    if (!has_cache_) {
        throw EngineError(std::string(kind()) + ": " + op + " called without a preceding forward");
    }
}

void Layer::zero_grads() {
    for (Tensor* g : grads()) g->fill(0.0f);
}

// ---------------------------------------------------------------- Dense

Dense::Dense(std::size_t in_features, std::size_t out_features)
    : in_(in_features),
      out_(out_features),
      weight_({out_features, in_features}),
      bias_({out_features}),
      grad_weight_({out_features, in_features}),
      grad_bias_({out_features}) {}

void Dense::init_kaiming(Rng& rng) {
    // Kaiming-uniform with fan_in scaling.
    float bound = std::sqrt(6.0f / static_cast<float>(in_));
    for (std::size_t i = 0; i < weight_.size(); ++i) weight_[i] = rng.uniform_f(-bound, bound);
    bias_.fill(0.0f);
}

Tensor Dense::infer(const Tensor& input) const {
    require_rank(input, 2, kind());
    if (input.dim(1) != in_) {
        throw EngineError("dense: input width " + std::to_string(input.dim(1)) +
                          " does not match layer in_features " + std::to_string(in_));
    }
    const std::size_t n = input.dim(0);
    Tensor out({n, out_});
    const float* x = input.data();
    const float* w = weight_.data();
    const float* b = bias_.data();
    float* y = out.data();
    for (std::size_t i = 0; i < n; ++i) {
        const float* xi = x + i * in_;
        float* yi = y + i * out_;
        for (std::size_t o = 0; o < out_; ++o) {
            const float* wo = w + o * in_;
            double acc = b[o];
            for (std::size_t j = 0; j < in_; ++j) acc += static_cast<double>(wo[j]) * xi[j];
            yi[o] = static_cast<float>(acc);
        }
    }
    return out;
}

Tensor Dense::train_forward(const Tensor& input) {
    Tensor out = infer(input);
    cached_input_ = input;
    return out;
}

Tensor Dense::eval_forward_cached(const Tensor& input) {
    Tensor out = infer(input);
    cached_input_ = input;
    return out;
}

Tensor Dense::backward(const Tensor& grad_output) {
    require_cache("backward");
    has_cache_ = false;
    const std::size_t n = cached_input_.dim(0);
    if (grad_output.rank() != 2 || grad_output.dim(0) != n || grad_output.dim(1) != out_) {
        throw EngineError("dense: upstream gradient shape " + grad_output.shape_str() +
                          " does not match output");
    }
    const float* x = cached_input_.data();
    const float* g = grad_output.data();
    const float* w = weight_.data();
    float* gw = grad_weight_.data();
    float* gb = grad_bias_.data();
    Tensor grad_in({n, in_});
    float* gx = grad_in.data();
    for (std::size_t i = 0; i < n; ++i) {
        const float* xi = x + i * in_;
        const float* gi = g + i * out_;
        float* gxi = gx + i * in_;
        for (std::size_t o = 0; o < out_; ++o) {
            const float go = gi[o];
            if (go == 0.0f) continue;
            gb[o] += go;
            float* gwo = gw + o * in_;
            const float* wo = w + o * in_;
            for (std::size_t j = 0; j < in_; ++j) {
                gwo[j] += go * xi[j];
                gxi[j] += go * wo[j];
            }
        }
    }
    return grad_in;
}

// ---------------------------------------------------------------- Relu

Tensor Relu::infer(const Tensor& input) const {
    Tensor out = input;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0f, out[i]);
    return out;
}

Tensor Relu::train_forward(const Tensor& input) {
    cached_input_ = input;
    return infer(input);
}

Tensor Relu::eval_forward_cached(const Tensor& input) {
    cached_input_ = input;
    return infer(input);
}

Tensor Relu::backward(const Tensor& grad_output) {
    require_cache("backward");
    has_cache_ = false;
    if (!grad_output.same_shape(cached_input_)) {
        throw EngineError("relu: upstream gradient shape mismatch");
    }
    Tensor grad_in = grad_output;
    for (std::size_t i = 0; i < grad_in.size(); ++i) {
        if (cached_input_[i] <= 0.0f) grad_in[i] = 0.0f;
    }
    return grad_in;
}

// ---------------------------------------------------------------- Dropout

Dropout::Dropout(float rate, std::uint64_t seed) : rate_(rate), rng_(seed) {
    if (rate < 0.0f || rate >= 1.0f) {
        throw EngineError("dropout rate must be in [0, 1), got " + std::to_string(rate));
    }
}

Tensor Dropout::train_forward(const Tensor& input) {
    mask_ = Tensor(input.shape());
    Tensor out = input;
    const float keep = 1.0f - rate_;
    const float scale = 1.0f / keep;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const bool kept = !rng_.bernoulli(rate_);
        mask_[i] = kept ? scale : 0.0f;
        out[i] *= mask_[i];
    }
    return out;
}

Tensor Dropout::eval_forward_cached(const Tensor& input) {
    mask_ = Tensor();  // eval gradient is a plain passthrough
    return input;
}

Tensor Dropout::backward(const Tensor& grad_output) {
    require_cache("backward");
    has_cache_ = false;
    if (cached_mode_ == Mode::eval) return grad_output;
    if (!grad_output.same_shape(mask_)) {
        throw EngineError("dropout: upstream gradient shape mismatch");
    }
    Tensor grad_in = grad_output;
    for (std::size_t i = 0; i < grad_in.size(); ++i) grad_in[i] *= mask_[i];
    return grad_in;
}

// ---------------------------------------------------------------- BatchNorm1d

BatchNorm1d::BatchNorm1d(std::size_t features, float eps, float momentum)
    : features_(features),
      eps_(eps),
      momentum_(momentum),
      gamma_(Tensor::full({features}, 1.0f)),
      beta_({features}),
      grad_gamma_({features}),
      grad_beta_({features}),
      running_mean_({features}),
      running_var_(Tensor::full({features}, 1.0f)) {}

Tensor BatchNorm1d::infer(const Tensor& input) const {
    require_rank(input, 2, kind());
    if (input.dim(1) != features_) {
        throw EngineError("batchnorm1d: input width " + std::to_string(input.dim(1)) +
                          " does not match feature count " + std::to_string(features_));
    }
    const std::size_t n = input.dim(0);
    Tensor out({n, features_});
    for (std::size_t j = 0; j < features_; ++j) {
        const float inv = 1.0f / std::sqrt(running_var_[j] + eps_);
        const float m = running_mean_[j];
        const float g = gamma_[j], b = beta_[j];
        for (std::size_t i = 0; i < n; ++i) {
            out[i * features_ + j] = g * (input[i * features_ + j] - m) * inv + b;
        }
    }
    return out;
}

Tensor BatchNorm1d::train_forward(const Tensor& input) {
    require_rank(input, 2, kind());
    if (input.dim(1) != features_) {
        throw EngineError("batchnorm1d: input width mismatch");
    }
    const std::size_t n = input.dim(0);
    cached_norm_ = Tensor({n, features_});
    cached_inv_std_.assign(features_, 0.0);
    Tensor out({n, features_});
    if (freeze_stats_) {
        cached_frozen_ = true;
        for (std::size_t j = 0; j < features_; ++j) {
            const double inv_std = 1.0 / std::sqrt(static_cast<double>(running_var_[j]) + eps_);
            cached_inv_std_[j] = inv_std;
            for (std::size_t i = 0; i < n; ++i) {
                const double norm = (input[i * features_ + j] - running_mean_[j]) * inv_std;
                cached_norm_[i * features_ + j] = static_cast<float>(norm);
                out[i * features_ + j] = static_cast<float>(gamma_[j] * norm + beta_[j]);
            }
        }
        return out;
    }
    cached_frozen_ = false;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t j = 0; j < features_; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) mean += input[i * features_ + j];
        mean *= inv_n;
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = input[i * features_ + j] - mean;
            var += d * d;
        }
        var *= inv_n;
        const double inv_std = 1.0 / std::sqrt(var + eps_);
        cached_inv_std_[j] = inv_std;
        for (std::size_t i = 0; i < n; ++i) {
            const double norm = (input[i * features_ + j] - mean) * inv_std;
            cached_norm_[i * features_ + j] = static_cast<float>(norm);
            out[i * features_ + j] = static_cast<float>(gamma_[j] * norm + beta_[j]);
        }
        // Running stats track the unbiased variance, as is conventional.
        const double unbiased = n > 1 ? var * static_cast<double>(n) / static_cast<double>(n - 1) : var;
        running_mean_[j] = (1.0f - momentum_) * running_mean_[j] + momentum_ * static_cast<float>(mean);
        running_var_[j] = (1.0f - momentum_) * running_var_[j] + momentum_ * static_cast<float>(unbiased);
    }
    return out;
}

Tensor BatchNorm1d::eval_forward_cached(const Tensor& input) {
    Tensor out = infer(input);
    cached_norm_ = input;  // only the shape is needed for the eval backward
    return out;
}

Tensor BatchNorm1d::backward(const Tensor& grad_output) {
    require_cache("backward");
    has_cache_ = false;
    if (!grad_output.same_shape(cached_norm_)) {
        throw EngineError("batchnorm1d: upstream gradient shape mismatch");
    }
    const std::size_t n = grad_output.dim(0);
    Tensor grad_in({n, features_});
    if (cached_mode_ == Mode::eval) {
        for (std::size_t j = 0; j < features_; ++j) {
            const float scale = gamma_[j] / std::sqrt(running_var_[j] + eps_);
            for (std::size_t i = 0; i < n; ++i) {
                grad_in[i * features_ + j] = grad_output[i * features_ + j] * scale;
            }
        }
        return grad_in;
    }
    if (cached_frozen_) {
        // Statistics were constants in the forward pass, so the batch
        // coupling terms vanish.
        for (std::size_t j = 0; j < features_; ++j) {
            double dgamma = 0.0, dbeta = 0.0;
            const double scale = gamma_[j] * cached_inv_std_[j];
            for (std::size_t i = 0; i < n; ++i) {
                const double g = grad_output[i * features_ + j];
                dgamma += g * cached_norm_[i * features_ + j];
                dbeta += g;
                grad_in[i * features_ + j] = static_cast<float>(g * scale);
            }
            grad_gamma_[j] += static_cast<float>(dgamma);
            grad_beta_[j] += static_cast<float>(dbeta);
        }
        return grad_in;
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t j = 0; j < features_; ++j) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double gy = grad_output[i * features_ + j] * gamma_[j];
            sum_g += gy;
            sum_gx += gy * cached_norm_[i * features_ + j];
        }
        double dgamma = 0.0, dbeta = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            dgamma += static_cast<double>(grad_output[i * features_ + j]) * cached_norm_[i * features_ + j];
            dbeta += grad_output[i * features_ + j];
        }
        grad_gamma_[j] += static_cast<float>(dgamma);
        grad_beta_[j] += static_cast<float>(dbeta);
        const double inv_std = cached_inv_std_[j];
        for (std::size_t i = 0; i < n; ++i) {
            const double gy = grad_output[i * features_ + j] * gamma_[j];
            const double xn = cached_norm_[i * features_ + j];
            grad_in[i * features_ + j] =
                static_cast<float>(inv_std * (gy - inv_n * sum_g - xn * inv_n * sum_gx));
        }
    }
    return grad_in;
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
               std::size_t stride, std::size_t padding)
    : in_ch_(in_channels),
      out_ch_(out_channels),
      kernel_(kernel),
      stride_(stride),
      padding_(padding),
      weight_({out_channels, in_channels, kernel, kernel}),
      bias_({out_channels}),
      grad_weight_({out_channels, in_channels, kernel, kernel}),
      grad_bias_({out_channels}) {
    if (kernel == 0 || stride == 0) throw EngineError("conv2d: kernel and stride must be positive");
}

void Conv2d::init_kaiming(Rng& rng) {
    const float fan_in = static_cast<float>(in_ch_ * kernel_ * kernel_);
    const float bound = std::sqrt(6.0f / fan_in);
    for (std::size_t i = 0; i < weight_.size(); ++i) weight_[i] = rng.uniform_f(-bound, bound);
    bias_.fill(0.0f);
}

Tensor Conv2d::infer(const Tensor& input) const {
    require_rank(input, 4, kind());
    if (input.dim(1) != in_ch_) {
        throw EngineError("conv2d: input has " + std::to_string(input.dim(1)) +
                          " channels, layer expects " + std::to_string(in_ch_));
    }
    const std::size_t n = input.dim(0), h = input.dim(2), w = input.dim(3);
    if (h + 2 * padding_ < kernel_ || w + 2 * padding_ < kernel_) {
        throw EngineError("conv2d: input " + input.shape_str() + " smaller than kernel");
    }
    const std::size_t oh = (h + 2 * padding_ - kernel_) / stride_ + 1;
    const std::size_t ow = (w + 2 * padding_ - kernel_) / stride_ + 1;
    Tensor out({n, out_ch_, oh, ow});
    const float* x = input.data();
    float* y = out.data();
    // Each output cell accumulates in double and is rounded once.
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t oc = 0; oc < out_ch_; ++oc) {
            float* yp = y + ((b * out_ch_ + oc) * oh) * ow;
            for (std::size_t oy = 0; oy < oh; ++oy) {
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    double acc = bias_[oc];
                    for (std::size_t ic = 0; ic < in_ch_; ++ic) {
                        const float* xp = x + ((b * in_ch_ + ic) * h) * w;
                        const float* wp = weight_.data() + ((oc * in_ch_ + ic) * kernel_) * kernel_;
                        for (std::size_t kh = 0; kh < kernel_; ++kh) {
                            const std::ptrdiff_t iy =
                                static_cast<std::ptrdiff_t>(oy * stride_ + kh) -
                                static_cast<std::ptrdiff_t>(padding_);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                            const float* xrow = xp + iy * static_cast<std::ptrdiff_t>(w);
                            const float* wrow = wp + kh * kernel_;
                            for (std::size_t kw = 0; kw < kernel_; ++kw) {
                                const std::ptrdiff_t ix =
                                    static_cast<std::ptrdiff_t>(ox * stride_ + kw) -
                                    static_cast<std::ptrdiff_t>(padding_);
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                                acc += static_cast<double>(wrow[kw]) * xrow[ix];
                            }
                        }
                    }
                    yp[oy * ow + ox] = static_cast<float>(acc);
                }
            }
        }
    }
    return out;
}

Tensor Conv2d::train_forward(const Tensor& input) {
    Tensor out = infer(input);
    cached_input_ = input;
    return out;
}

Tensor Conv2d::eval_forward_cached(const Tensor& input) {
    Tensor out = infer(input);
    cached_input_ = input;
    return out;
}

Tensor Conv2d::backward(const Tensor& grad_output) {
    require_cache("backward");
    has_cache_ = false;
    const std::size_t n = cached_input_.dim(0), h = cached_input_.dim(2), w = cached_input_.dim(3);
    const std::size_t oh = (h + 2 * padding_ - kernel_) / stride_ + 1;
    const std::size_t ow = (w + 2 * padding_ - kernel_) / stride_ + 1;
    if (grad_output.rank() != 4 || grad_output.dim(0) != n || grad_output.dim(1) != out_ch_ ||
        grad_output.dim(2) != oh || grad_output.dim(3) != ow) {
        throw EngineError("conv2d: upstream gradient shape " + grad_output.shape_str() +
                          " does not match output");
    }
    Tensor grad_in(cached_input_.shape());
    const float* x = cached_input_.data();
    const float* g = grad_output.data();
    float* gx = grad_in.data();
    float* gw = grad_weight_.data();
    for (std::size_t oc = 0; oc < out_ch_; ++oc) {
        double acc = 0.0;
        for (std::size_t b = 0; b < n; ++b) {
            const float* gp = g + ((b * out_ch_ + oc) * oh) * ow;
            for (std::size_t i = 0; i < oh * ow; ++i) acc += gp[i];
        }
        grad_bias_[oc] += static_cast<float>(acc);
    }
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t ic = 0; ic < in_ch_; ++ic) {
            const float* xp = x + ((b * in_ch_ + ic) * h) * w;
            float* gxp = gx + ((b * in_ch_ + ic) * h) * w;
            for (std::size_t oc = 0; oc < out_ch_; ++oc) {
                const float* gp = g + ((b * out_ch_ + oc) * oh) * ow;
                const float* wp = weight_.data() + ((oc * in_ch_ + ic) * kernel_) * kernel_;
                float* gwp = gw + ((oc * in_ch_ + ic) * kernel_) * kernel_;
                for (std::size_t kh = 0; kh < kernel_; ++kh) {
                    for (std::size_t kw = 0; kw < kernel_; ++kw) {
                        const float wv = wp[kh * kernel_ + kw];
                        double wacc = 0.0;
                        for (std::size_t oy = 0; oy < oh; ++oy) {
                            const std::ptrdiff_t iy =
                                static_cast<std::ptrdiff_t>(oy * stride_ + kh) -
                                static_cast<std::ptrdiff_t>(padding_);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                            const float* xrow = xp + iy * static_cast<std::ptrdiff_t>(w);
                            float* gxrow = gxp + iy * static_cast<std::ptrdiff_t>(w);
                            const float* grow = gp + oy * ow;
                            for (std::size_t ox = 0; ox < ow; ++ox) {
                                const std::ptrdiff_t ix =
                                    static_cast<std::ptrdiff_t>(ox * stride_ + kw) -
                                    static_cast<std::ptrdiff_t>(padding_);
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                                const float gv = grow[ox];
                                wacc += static_cast<double>(gv) * xrow[ix];
                                gxrow[ix] += gv * wv;
                            }
                        }
                        gwp[kh * kernel_ + kw] += static_cast<float>(wacc);
                    }
                }
            }
        }
    }
    return grad_in;
}

// ---------------------------------------------------------------- AdaptiveAvgPool2d

AdaptiveAvgPool2d::AdaptiveAvgPool2d(std::size_t bins_h, std::size_t bins_w)
    : bins_h_(bins_h), bins_w_(bins_w) {
    if (bins_h == 0 || bins_w == 0) {
        throw EngineError("adaptive-avg-pool: bin counts must be positive");
    }
}

Tensor AdaptiveAvgPool2d::infer(const Tensor& input) const {
    require_rank(input, 4, kind());
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    Tensor out({n, c, bins_h_, bins_w_});
    const float* x = input.data();
    float* y = out.data();
    for (std::size_t plane = 0; plane < n * c; ++plane) {
        const float* xp = x + plane * h * w;
        float* yp = y + plane * bins_h_ * bins_w_;
        for (std::size_t by = 0; by < bins_h_; ++by) {
            const std::size_t y0 = region_start(by, h, bins_h_), y1 = region_end(by, h, bins_h_);
            for (std::size_t bx = 0; bx < bins_w_; ++bx) {
                const std::size_t x0 = region_start(bx, w, bins_w_), x1 = region_end(bx, w, bins_w_);
                double acc = 0.0;
                for (std::size_t iy = y0; iy < y1; ++iy) {
                    for (std::size_t ix = x0; ix < x1; ++ix) acc += xp[iy * w + ix];
                }
                yp[by * bins_w_ + bx] = static_cast<float>(acc / static_cast<double>((y1 - y0) * (x1 - x0)));
            }
        }
    }
    return out;
}

Tensor AdaptiveAvgPool2d::train_forward(const Tensor& input) {
    cached_in_shape_ = input.shape();
    return infer(input);
}

Tensor AdaptiveAvgPool2d::eval_forward_cached(const Tensor& input) {
    cached_in_shape_ = input.shape();
    return infer(input);
}

Tensor AdaptiveAvgPool2d::backward(const Tensor& grad_output) {
    require_cache("backward");
    has_cache_ = false;
    const std::size_t n = cached_in_shape_[0], c = cached_in_shape_[1];
    const std::size_t h = cached_in_shape_[2], w = cached_in_shape_[3];
    Tensor grad_in(cached_in_shape_);
    const float* g = grad_output.data();
    float* gx = grad_in.data();
    for (std::size_t plane = 0; plane < n * c; ++plane) {
        const float* gp = g + plane * bins_h_ * bins_w_;
        float* gxp = gx + plane * h * w;
        for (std::size_t by = 0; by < bins_h_; ++by) {
            const std::size_t y0 = region_start(by, h, bins_h_), y1 = region_end(by, h, bins_h_);
            for (std::size_t bx = 0; bx < bins_w_; ++bx) {
                const std::size_t x0 = region_start(bx, w, bins_w_), x1 = region_end(bx, w, bins_w_);
                const float share = gp[by * bins_w_ + bx] / static_cast<float>((y1 - y0) * (x1 - x0));
                for (std::size_t iy = y0; iy < y1; ++iy) {
                    for (std::size_t ix = x0; ix < x1; ++ix) gxp[iy * w + ix] += share;
                }
            }
        }
    }
    return grad_in;
}

// ---------------------------------------------------------------- SpatialPyramidPool

SpatialPyramidPool::SpatialPyramidPool(std::vector<int> levels) : levels_(std::move(levels)) {
    if (levels_.empty()) throw EngineError("spp: pyramid level list must be nonempty");
    for (int l : levels_) {
        if (l < 1) throw EngineError("spp: pyramid levels must be >= 1");
    }
}

std::size_t SpatialPyramidPool::bins_total() const {
    std::size_t total = 0;
    for (int l : levels_) total += static_cast<std::size_t>(l) * static_cast<std::size_t>(l);
    return total;
}

Tensor SpatialPyramidPool::infer(const Tensor& input) const {
    require_rank(input, 4, kind());
    const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    Tensor out({n, output_dim(c)});
    const float* x = input.data();
    for (std::size_t b = 0; b < n; ++b) {
        float* yp = out.data() + b * output_dim(c);
        std::size_t offset = 0;
        for (int level : levels_) {
            const std::size_t bins = static_cast<std::size_t>(level);
            for (std::size_t ch = 0; ch < c; ++ch) {
                const float* xp = x + ((b * c + ch) * h) * w;
                for (std::size_t by = 0; by < bins; ++by) {
                    const std::size_t y0 = region_start(by, h, bins), y1 = region_end(by, h, bins);
                    for (std::size_t bx = 0; bx < bins; ++bx) {
                        const std::size_t x0 = region_start(bx, w, bins), x1 = region_end(bx, w, bins);
                        double acc = 0.0;
                        for (std::size_t iy = y0; iy < y1; ++iy) {
                            for (std::size_t ix = x0; ix < x1; ++ix) acc += xp[iy * w + ix];
                        }
                        yp[offset++] =
                            static_cast<float>(acc / static_cast<double>((y1 - y0) * (x1 - x0)));
                    }
                }
            }
        }
    }
    return out;
}

Tensor SpatialPyramidPool::train_forward(const Tensor& input) {
    cached_in_shape_ = input.shape();
    return infer(input);
}

Tensor SpatialPyramidPool::eval_forward_cached(const Tensor& input) {
    cached_in_shape_ = input.shape();
    return infer(input);
}

Tensor SpatialPyramidPool::backward(const Tensor& grad_output) {
    require_cache("backward");
    has_cache_ = false;
    const std::size_t n = cached_in_shape_[0], c = cached_in_shape_[1];
    const std::size_t h = cached_in_shape_[2], w = cached_in_shape_[3];
    if (grad_output.rank() != 2 || grad_output.dim(0) != n || grad_output.dim(1) != output_dim(c)) {
        throw EngineError("spp: upstream gradient shape mismatch");
    }
    Tensor grad_in(cached_in_shape_);
    float* gx = grad_in.data();
    for (std::size_t b = 0; b < n; ++b) {
        const float* gp = grad_output.data() + b * output_dim(c);
        std::size_t offset = 0;
        for (int level : levels_) {
            const std::size_t bins = static_cast<std::size_t>(level);
            for (std::size_t ch = 0; ch < c; ++ch) {
                float* gxp = gx + ((b * c + ch) * h) * w;
                for (std::size_t by = 0; by < bins; ++by) {
                    const std::size_t y0 = region_start(by, h, bins), y1 = region_end(by, h, bins);
                    for (std::size_t bx = 0; bx < bins; ++bx) {
                        const std::size_t x0 = region_start(bx, w, bins), x1 = region_end(bx, w, bins);
                        const float share =
                            gp[offset++] / static_cast<float>((y1 - y0) * (x1 - x0));
                        for (std::size_t iy = y0; iy < y1; ++iy) {
                            for (std::size_t ix = x0; ix < x1; ++ix) gxp[iy * w + ix] += share;
                        }
                    }
                }
            }
        }
    }
    return grad_in;
}

// ---------------------------------------------------------------- GradientReversal

Tensor GradientReversal::backward(const Tensor& grad_output) {
    require_cache("backward");
    has_cache_ = false;
    Tensor grad_in = grad_output;
    for (std::size_t i = 0; i < grad_in.size(); ++i) grad_in[i] *= -lambda_;
    return grad_in;
}

// ---------------------------------------------------------------- Network

Network::Network(const Network& other) {
    layers_.reserve(other.layers_.size());
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Network& Network::operator=(const Network& other) {
    if (this != &other) {
        layers_.clear();
        layers_.reserve(other.layers_.size());
        for (const auto& l : other.layers_) layers_.push_back(l->clone());
    }
    return *this;
}

Layer& Network::add(std::unique_ptr<Layer> layer) {
    layers_.push_back(std::move(layer));
    return *layers_.back();
}

Tensor Network::forward(const Tensor& input, Mode mode) {
    Tensor x = input;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        try {
            x = layers_[i]->forward(x, mode);
        } catch (const EngineError& e) {
            throw EngineError("layer " + std::to_string(i) + " (" + layers_[i]->kind() +
                              "): " + e.what());
        }
    }
    return x;
}

Tensor Network::infer(const Tensor& input) const {
    Tensor x = input;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        try {
            x = layers_[i]->infer(x);
        } catch (const EngineError& e) {
            throw EngineError("layer " + std::to_string(i) + " (" + layers_[i]->kind() +
                              "): " + e.what());
        }
        x.require_finite(std::string(layers_[i]->kind()) + " output");
    }
    return x;
}

Tensor Network::backward(const Tensor& grad_output) {
    Tensor g = grad_output;
    for (std::size_t i = layers_.size(); i-- > 0;) {
        g = layers_[i]->backward(g);
        g.require_finite(std::string(layers_[i]->kind()) + " input gradient");
    }
    return g;
}

std::vector<Tensor*> Network::params() {
    std::vector<Tensor*> out;
    for (auto& l : layers_) {
        for (Tensor* p : l->params()) out.push_back(p);
    }
    return out;
}

std::vector<Tensor*> Network::grads() {
    std::vector<Tensor*> out;
    for (auto& l : layers_) {
        for (Tensor* g : l->grads()) out.push_back(g);
    }
    return out;
}

std::vector<Tensor*> Network::state() {
    std::vector<Tensor*> out;
    for (auto& l : layers_) {
        for (Tensor* s : l->state()) out.push_back(s);
    }
    return out;
}

void Network::zero_grads() {
    for (auto& l : layers_) l->zero_grads();
}

void Network::reseed(std::uint64_t seed) {
    std::uint64_t s = seed;
    for (auto& l : layers_) l->reseed(s++);
}

std::uint64_t params_checksum(const std::vector<Tensor*>& params) {
    std::uint64_t hash = 0xcbf29ce484222325ull;
    for (const Tensor* t : params) {
        const unsigned char* bytes = reinterpret_cast<const unsigned char*>(t->data());
        const std::size_t len = t->size() * sizeof(float);
        for (std::size_t i = 0; i < len; ++i) {
            hash ^= bytes[i];
            hash *= 0x100000001b3ull;
        }
    }
    return hash;
}

}  // namespace qlife
