#include <doctest.h>

#include <cmath>
#include <cstring>

#include "qlife/errors.hpp"
#include "qlife/layers.hpp"
#include "qlife/losses.hpp"
#include "qlife/optim.hpp"
#include "testutil.hpp"

using namespace qlife;
using testutil::fd_check;
using testutil::random_tensor;
using testutil::rel_err;
using testutil::WeightedSum;

TEST_CASE("relu clamps negatives") {
    Relu relu;
    Tensor out = relu.forward(Tensor::row({-1.0f, 0.0f, 2.0f}), Mode::eval);
    CHECK(out[0] == 0.0f);
    CHECK(out[1] == 0.0f);
    CHECK(out[2] == 2.0f);
}

TEST_CASE("dense with identity weights is the identity") {
    Dense dense(3, 3);
    dense.weight().fill(0.0f);
    for (std::size_t i = 0; i < 3; ++i) dense.weight()[i * 3 + i] = 1.0f;
    dense.bias().fill(0.0f);
    Tensor x({2, 3}, {0.5f, -1.5f, 2.0f, 3.0f, 0.0f, -0.25f});
    Tensor y = dense.infer(x);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("two dense layers match a naive matrix product") {
    Rng rng(42);
    Dense d1(4, 3), d2(3, 2);
    d1.init_kaiming(rng);
    d2.init_kaiming(rng);
    Tensor x = random_tensor({2, 4}, rng);
    Network net;
    net.add(d1.clone());
    net.add(d2.clone());
    Tensor got = net.infer(x);

    // Oracle: naive double-precision y = (x W1^T + b1) W2^T + b2.
    auto naive = [](const Tensor& in, const Dense& d) {
        Tensor out({in.dim(0), d.out_features()});
        for (std::size_t i = 0; i < in.dim(0); ++i) {
            for (std::size_t o = 0; o < d.out_features(); ++o) {
                double acc = d.bias()[o];
                for (std::size_t j = 0; j < d.in_features(); ++j) {
                    acc += static_cast<double>(in[i * d.in_features() + j]) *
                           d.weight()[o * d.in_features() + j];
                }
                out[i * d.out_features() + o] = static_cast<float>(acc);
            }
        }
        return out;
    };
    Tensor want = naive(naive(x, d1), d2);
    REQUIRE(got.same_shape(want));
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-6));
}

TEST_CASE("sum loss through identity dense gives the input as weight gradient") {
    Dense dense(3, 3);
    dense.weight().fill(0.0f);
    for (std::size_t i = 0; i < 3; ++i) dense.weight()[i * 3 + i] = 1.0f;
    Tensor x({1, 3}, {0.7f, -0.2f, 1.5f});
    dense.forward(x, Mode::train);
    dense.backward(Tensor::full({1, 3}, 1.0f));
    // d(sum)/dW[o][j] = x[j] for every output row o.
    for (std::size_t o = 0; o < 3; ++o) {
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(dense.grads()[0]->operator[](o * 3 + j) == doctest::Approx(x[j]));
        }
    }
    for (std::size_t o = 0; o < 3; ++o) CHECK(dense.grads()[1]->operator[](o) == doctest::Approx(1.0f));
}

namespace {

// Layer-level finite difference run: weighted-sum loss over the output,
// checking input and parameter gradients.
double layer_fd_worst(Layer& layer, Tensor x, std::uint64_t seed, double epsilon = 1e-4) {
    Rng rng(seed);
    layer.reseed(seed);
    Tensor y0 = layer.forward(x, Mode::train);
    WeightedSum loss(y0.shape(), rng);
    layer.zero_grads();
    layer.reseed(seed);
    layer.forward(x, Mode::train);
    Tensor gx = layer.backward(loss.weights);

    auto eval = [&]() {
        layer.reseed(seed);
        return loss.value(layer.forward(x, Mode::train));
    };
    double worst = fd_check(x, gx, eval, epsilon);
    auto params = layer.params();
    auto grads = layer.grads();
    for (std::size_t p = 0; p < params.size(); ++p) {
        worst = std::max(worst, fd_check(*params[p], *grads[p], eval, epsilon));
    }
    return worst;
}

}  // namespace

TEST_CASE("finite differences validate every layer kind") {
    Rng rng(7);
    for (std::uint64_t trial = 0; trial < 10; ++trial) {
        {
            Dense dense(5, 4);
            dense.init_kaiming(rng);
            CHECK(layer_fd_worst(dense, random_tensor({3, 5}, rng), trial) < 1e-3);
        }
        {
            Relu relu;
            CHECK(layer_fd_worst(relu, random_tensor({3, 6}, rng), trial) < 1e-3);
        }
        {
            // Modest activation magnitudes keep the float32 rounding noise
            // well under the 1e-3 gate at epsilon 1e-4.
            Conv2d conv(2, 3, 3, 2, 1);
            conv.init_kaiming(rng);
            for (std::size_t i = 0; i < conv.weight().size(); ++i) conv.weight()[i] *= 0.5f;
            CHECK(layer_fd_worst(conv, random_tensor({2, 2, 6, 6}, rng, -0.5f, 0.5f), trial) < 1e-3);
        }
        {
            BatchNorm1d bn(4);
            CHECK(layer_fd_worst(bn, random_tensor({5, 4}, rng), trial) < 1e-3);
        }
        {
            Dropout drop(0.4f, trial);
            CHECK(layer_fd_worst(drop, random_tensor({3, 6}, rng), trial) < 1e-3);
        }
        {
            AdaptiveAvgPool2d pool(2, 3);
            CHECK(layer_fd_worst(pool, random_tensor({2, 2, 5, 7}, rng), trial) < 1e-3);
        }
        {
            SpatialPyramidPool spp({2, 1});
            CHECK(layer_fd_worst(spp, random_tensor({2, 2, 5, 6}, rng), trial) < 1e-3);
        }
    }
}

// The reversal layer is excluded from the generic finite-difference loop on
// purpose: its backward is defined as -lambda times the upstream gradient,
// not as the gradient of its (identity) forward. The composite objective it
// produces is checked by finite differences in the adversarial tests.
TEST_CASE("gradient reversal is an exact identity forward and -lambda backward") {
    GradientReversal grl(1.0f);
    Tensor x = Tensor::row({3.5f, -1.0f}).reshaped({1, 2});
    Tensor y = grl.forward(x, Mode::train);
    CHECK(std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) == 0);

    Tensor g({1, 2}, {1.0f, 2.0f});
    Tensor gx = grl.backward(g);
    CHECK(gx[0] == -1.0f);
    CHECK(gx[1] == -2.0f);

    GradientReversal off(0.0f);
    off.forward(x, Mode::train);
    Tensor zero = off.backward(g);
    CHECK(zero[0] == 0.0f);
    CHECK(zero[1] == 0.0f);
}

TEST_CASE("gradient reversal scales linearly in lambda") {
    Rng rng(21);
    Tensor g = random_tensor({2, 3}, rng);
    Tensor x = random_tensor({2, 3}, rng);
    GradientReversal a(0.5f), b(2.0f);
    a.forward(x, Mode::train);
    b.forward(x, Mode::train);
    Tensor ga = a.backward(g);
    Tensor gb = b.backward(g);
    for (std::size_t i = 0; i < g.size(); ++i) {
        CHECK(gb[i] == doctest::Approx(4.0f * ga[i]).epsilon(1e-6));
    }
}

TEST_CASE("dropout in eval mode passes gradients through unscaled") {
    Dropout drop(0.5f, 3);
    Tensor x = Tensor::row({1.0f, -2.0f, 3.0f}).reshaped({1, 3});
    Tensor y = drop.forward(x, Mode::eval);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == x[i]);
    Tensor g({1, 3}, {0.5f, 0.25f, -1.0f});
    Tensor gx = drop.backward(g);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(gx[i] == g[i]);
}

TEST_CASE("backward without forward fails") {
    Dense dense(2, 2);
    CHECK_THROWS_AS(dense.backward(Tensor({1, 2})), EngineError);
}

TEST_CASE("shape mismatch names the offending layer") {
    Network net;
    net.emplace<Dense>(4, 2);
    try {
        net.infer(Tensor({1, 3}));
        FAIL("expected a shape error");
    } catch (const EngineError& e) {
        CHECK(std::string(e.what()).find("dense") != std::string::npos);
        CHECK(std::string(e.what()).find("layer 0") != std::string::npos);
    }
}

TEST_CASE("non-finite activations are rejected") {
    Relu relu;
    Tensor x({1, 2});
    x[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(relu.forward(x, Mode::train), EngineError);
}

TEST_CASE("cross entropy on uniform logits equals log(classes)") {
    Tensor logits({2, 3});
    logits.fill(0.5f);
    std::vector<int> labels = {0, 2};
    Loss loss = cross_entropy(logits, labels);
    CHECK(loss.value == doctest::Approx(std::log(3.0)).epsilon(1e-6));
}

TEST_CASE("cross entropy vanishes for confident correct logits") {
    Tensor logits({1, 3}, {50.0f, 0.0f, 0.0f});
    std::vector<int> labels = {0};
    CHECK(cross_entropy(logits, labels).value < 1e-9);
}

TEST_CASE("cross entropy matches a naive log-sum-exp oracle") {
    Rng rng(11);
    Tensor logits = random_tensor({2, 3}, rng, -2.0f, 2.0f);
    std::vector<int> labels = {2, 0};
    Loss loss = cross_entropy(logits, labels);

    double want = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
        double lse = 0.0;
        for (std::size_t j = 0; j < 3; ++j) lse += std::exp(static_cast<double>(logits[i * 3 + j]));
        want += std::log(lse) - logits[i * 3 + static_cast<std::size_t>(labels[i])];
    }
    want /= 2.0;
    CHECK(loss.value == doctest::Approx(want).epsilon(1e-9));

    // Gradient rows are (softmax - onehot) / batch.
    for (std::size_t i = 0; i < 2; ++i) {
        double lse = 0.0;
        for (std::size_t j = 0; j < 3; ++j) lse += std::exp(static_cast<double>(logits[i * 3 + j]));
        for (std::size_t j = 0; j < 3; ++j) {
            const double sm = std::exp(static_cast<double>(logits[i * 3 + j])) / lse;
            const double onehot = static_cast<int>(j) == labels[i] ? 1.0 : 0.0;
            CHECK(loss.grad[i * 3 + j] == doctest::Approx((sm - onehot) / 2.0).epsilon(1e-5));
        }
    }
}

TEST_CASE("cross entropy rejects out-of-range labels") {
    Tensor logits({1, 3});
    std::vector<int> labels = {3};
    CHECK_THROWS_AS(cross_entropy(logits, labels), EngineError);
}

TEST_CASE("adaptive pooling of a constant map is constant") {
    AdaptiveAvgPool2d pool(3, 2);
    Tensor x = Tensor::full({1, 2, 7, 5}, 4.25f);
    Tensor y = pool.infer(x);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(4.25f));
}

TEST_CASE("1x1 adaptive pooling is the global mean") {
    Rng rng(5);
    Tensor x = random_tensor({1, 1, 4, 4}, rng);
    Tensor y = AdaptiveAvgPool2d(1, 1).infer(x);
    double mean = 0.0;
    for (std::size_t i = 0; i < 16; ++i) mean += x[i];
    CHECK(y[0] == doctest::Approx(mean / 16.0).epsilon(1e-6));
}

TEST_CASE("adaptive pooling matches brute-force region means on a ramp") {
    Tensor x({1, 1, 5, 5});
    for (std::size_t i = 0; i < 25; ++i) x[i] = static_cast<float>(i);
    Tensor y = AdaptiveAvgPool2d(2, 2).infer(x);
    // Oracle: enumerate the floor/ceil regions directly.
    for (std::size_t by = 0; by < 2; ++by) {
        const std::size_t y0 = by * 5 / 2, y1 = (by + 1) * 5 / 2 + (((by + 1) * 5) % 2 ? 1 : 0);
        for (std::size_t bx = 0; bx < 2; ++bx) {
            const std::size_t x0 = bx * 5 / 2, x1 = (bx + 1) * 5 / 2 + (((bx + 1) * 5) % 2 ? 1 : 0);
            double acc = 0.0;
            for (std::size_t iy = y0; iy < y1; ++iy) {
                for (std::size_t ix = x0; ix < x1; ++ix) acc += iy * 5 + ix;
            }
            acc /= static_cast<double>((y1 - y0) * (x1 - x0));
            CHECK(y[by * 2 + bx] == doctest::Approx(acc).epsilon(1e-6));
        }
    }
}

TEST_CASE("zero pooling bins are rejected") {
    CHECK_THROWS_AS(AdaptiveAvgPool2d(0, 2), EngineError);
    CHECK_THROWS_AS(SpatialPyramidPool({}), EngineError);
}

TEST_CASE("sgd step follows the update rule") {
    Tensor p = Tensor::row({1.0f});
    Tensor g = Tensor::row({1.0f});
    SgdOptimizer opt(0.1f, 0.0f);
    opt.step({&p}, {&g});
    CHECK(p[0] == doctest::Approx(0.9f));

    Tensor zero = Tensor::row({0.0f});
    SgdOptimizer opt2(0.5f, 0.9f);
    Tensor q = Tensor::row({2.5f});
    opt2.step({&q}, {&zero});
    CHECK(q[0] == 2.5f);
}

TEST_CASE("momentum updates match the recurrence oracle") {
    const float lr = 0.1f, m = 0.9f, g0 = 0.5f;
    Tensor p = Tensor::row({1.0f});
    Tensor g = Tensor::row({g0});
    SgdOptimizer opt(lr, m);
    for (int i = 0; i < 3; ++i) opt.step({&p}, {&g});

    double v = 0.0, want = 1.0;
    for (int i = 0; i < 3; ++i) {
        v = m * v + g0;
        want -= lr * v;
    }
    CHECK(p[0] == doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("non-finite gradients abort the step") {
    Tensor p = Tensor::row({1.0f});
    Tensor g = Tensor::row({std::numeric_limits<float>::infinity()});
    SgdOptimizer opt(0.1f);
    CHECK_THROWS_AS(opt.step({&p}, {&g}), EngineError);
}

TEST_CASE("batchnorm normalizes the batch when affine is identity") {
    Rng rng(13);
    BatchNorm1d bn(6);
    Tensor x = random_tensor({64, 6}, rng, -3.0f, 5.0f);
    Tensor y = bn.forward(x, Mode::train);
    for (std::size_t j = 0; j < 6; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < 64; ++i) mean += y[i * 6 + j];
        mean /= 64.0;
        double var = 0.0;
        for (std::size_t i = 0; i < 64; ++i) {
            var += (y[i * 6 + j] - mean) * (y[i * 6 + j] - mean);
        }
        var /= 64.0;
        CHECK(std::fabs(mean) < 1e-5);
        CHECK(std::fabs(var - 1.0) < 1e-4);
    }
}

TEST_CASE("training is bitwise deterministic for a fixed seed") {
    auto run = [] {
        Rng rng(99);
        Network net;
        auto& d1 = net.emplace<Dense>(6, 8);
        d1.init_kaiming(rng);
        net.emplace<Relu>();
        net.emplace<Dropout>(0.3f, 0);
        auto& d2 = net.emplace<Dense>(8, 2);
        d2.init_kaiming(rng);
        net.reseed(17);
        SgdOptimizer opt(0.05f, 0.9f);
        Rng data_rng(5);
        for (int step = 0; step < 20; ++step) {
            Tensor x = random_tensor({4, 6}, data_rng);
            std::vector<int> labels = {0, 1, 0, 1};
            net.zero_grads();
            Tensor logits = net.forward(x, Mode::train);
            Loss ce = cross_entropy(logits, labels);
            net.backward(ce.grad);
            auto params = net.params();
            auto grads = net.grads();
            opt.step(params, grads);
        }
        return params_checksum(net.params());
    };
    CHECK(run() == run());
}

TEST_CASE("eval-mode forward mutates no state and is repeatable") {
    Rng rng(3);
    Network net;
    auto& d = net.emplace<Dense>(5, 4);
    d.init_kaiming(rng);
    net.emplace<Relu>();
    net.emplace<Dropout>(0.5f, 1);
    auto& bn = net.emplace<BatchNorm1d>(4);
    (void)bn;
    Tensor x = random_tensor({3, 5}, rng);
    net.forward(x, Mode::train);  // populate running stats

    std::vector<Tensor> params_before, state_before;
    for (Tensor* p : net.params()) params_before.push_back(*p);
    for (Tensor* s : net.state()) state_before.push_back(*s);

    Tensor y1 = net.infer(x);
    Tensor y2 = net.infer(x);
    REQUIRE(y1.size() == y2.size());
    for (std::size_t i = 0; i < y1.size(); ++i) CHECK(y1[i] == y2[i]);

    auto params_after = net.params();
    for (std::size_t k = 0; k < params_before.size(); ++k) {
        for (std::size_t i = 0; i < params_before[k].size(); ++i) {
            CHECK(params_before[k][i] == (*params_after[k])[i]);
        }
    }
    auto state_after = net.state();
    for (std::size_t k = 0; k < state_before.size(); ++k) {
        for (std::size_t i = 0; i < state_before[k].size(); ++i) {
            CHECK(state_before[k][i] == (*state_after[k])[i]);
        }
    }
}
