#include <doctest.h>

#include <cmath>

#include "qlife/errors.hpp"
#include "qlife/novelty.hpp"
#include "testutil.hpp"

using namespace qlife;
using testutil::gaussian_cloud;

namespace {

Tensor shifted_cloud(std::size_t n, std::size_t d, double along_e1, double stddev, Rng& rng) {
    std::vector<double> mean(d, 0.0);
    mean[0] = along_e1;
    return gaussian_cloud(n, mean, stddev, rng);
}

}  // namespace

TEST_CASE("axis-aligned symmetric classes recover the first basis vector") {
    Rng rng(1);
    Tensor c1 = shifted_cloud(200, 5, 1.0, 1.0, rng);
    Tensor c2 = shifted_cloud(200, 5, -1.0, 1.0, rng);
    novelty::LdaModel lda = novelty::fit_lda(c1, c2);
    // |cos(direction, e1)| >= 0.99.
    CHECK(std::fabs(lda.direction[0]) >= 0.99);
    double norm = 0.0;
    for (double v : lda.direction) norm += v * v;
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("fitted direction beats 1000 random directions on the Fisher ratio") {
    Rng rng(2);
    for (int problem = 0; problem < 5; ++problem) {
        const std::size_t d = 4 + rng.below(6);
        std::vector<double> m1(d), m2(d);
        for (std::size_t j = 0; j < d; ++j) {
            m1[j] = rng.uniform(-1.0, 1.0);
            m2[j] = rng.uniform(-1.0, 1.0);
        }
        Tensor c1 = gaussian_cloud(120, m1, 0.7, rng);
        Tensor c2 = gaussian_cloud(120, m2, 1.1, rng);
        novelty::LdaModel lda = novelty::fit_lda(c1, c2);
        const double fitted = testutil::naive_fisher_ratio(c1, c2, lda.feature_mean,
                                                           lda.feature_std, lda.direction);
        for (int t = 0; t < 1000; ++t) {
            std::vector<double> dir(d);
            for (std::size_t j = 0; j < d; ++j) dir[j] = rng.normal();
            const double ratio =
                testutil::naive_fisher_ratio(c1, c2, lda.feature_mean, lda.feature_std, dir);
            CHECK(fitted >= ratio - 1e-9);
        }
    }
}

TEST_CASE("identical class distributions are flagged degenerate") {
    Rng rng(3);
    std::vector<double> mean(4, 0.5);
    Tensor c1 = gaussian_cloud(100, mean, 1.0, rng);
    Tensor c2 = c1;
    CHECK_THROWS_AS(novelty::fit_lda(c1, c2), EngineError);
}

TEST_CASE("novelty score vanishes exactly at the projected class means") {
    novelty::LdaModel lda;
    lda.feature_mean = {0.0, 0.0};
    lda.feature_std = {1.0, 1.0};
    lda.direction = {1.0, 0.0};
    lda.mu1 = 1.5;
    lda.mu2 = -0.5;
    lda.pooled_var = 0.25;  // sigma = 0.5

    const std::vector<float> at_mu1 = {1.5f, 3.0f};
    const std::vector<float> at_mu2 = {-0.5f, -1.0f};
    CHECK(novelty::novelty_score(lda, at_mu1) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(novelty::novelty_score(lda, at_mu2) == doctest::Approx(0.0).epsilon(1e-12));

    // Two pooled sigmas from mu1 with mu2 farther: (2 sigma)^2 / sigma^2 = 4.
    const std::vector<float> two_sigma = {2.5f, 0.0f};
    CHECK(novelty::novelty_score(lda, two_sigma) == doctest::Approx(4.0).epsilon(1e-9));

    // Nonnegative everywhere.
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        const std::vector<float> x = {rng.uniform_f(-10.0f, 10.0f), rng.uniform_f(-10.0f, 10.0f)};
        CHECK(novelty::novelty_score(lda, x) >= 0.0);
    }
}

TEST_CASE("percentile follows the linear interpolation rule") {
    std::vector<double> scores;
    for (int i = 1; i <= 100; ++i) scores.push_back(i);
    const double p95 = novelty::percentile(scores, 95.0);
    CHECK(p95 > 95.0);
    CHECK(p95 < 96.0);
    CHECK(p95 == doctest::Approx(95.05));

    CHECK(novelty::percentile({3.5, 3.5, 3.5}, 95.0) == doctest::Approx(3.5));
    CHECK_THROWS_AS(novelty::percentile({}, 95.0), EngineError);

    // Random set against a sort-and-index oracle.
    Rng rng(6);
    std::vector<double> random_scores;
    for (int i = 0; i < 57; ++i) random_scores.push_back(rng.uniform(0.0, 10.0));
    std::vector<double> sorted = random_scores;
    std::sort(sorted.begin(), sorted.end());
    const double rank = 0.95 * (sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(rank);
    const double expect = sorted[lo] + (rank - lo) * (sorted[lo + 1] - sorted[lo]);
    CHECK(novelty::percentile(random_scores, 95.0) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("vote threshold from an injected null histogram") {
    // P(V>2) = 0.12, P(V>3) = 0.02 with alpha 0.05 picks t = 3.
    std::vector<double> pmf = {0.50, 0.23, 0.15, 0.10, 0.02};
    bool ok = false;
    CHECK(novelty::vote_threshold_from_histogram(pmf, 0.05, &ok) == 3);
    CHECK(ok);

    // alpha = 1 accepts any rate, so t = 0.
    CHECK(novelty::vote_threshold_from_histogram(pmf, 1.0) == 0);

    // Pathological null: only the trivial t = N qualifies (P(V > N) = 0),
    // so the batch test could never fire; flagged.
    std::vector<double> all_high = {0.0, 0.0, 0.0, 0.0, 1.0};
    CHECK(novelty::vote_threshold_from_histogram(all_high, 0.05, &ok) == 4);
    CHECK_FALSE(ok);
}

TEST_CASE("batch decisions follow the calibrated vote rule") {
    Rng rng(7);
    Tensor c1 = shifted_cloud(150, 4, 3.0, 0.5, rng);
    Tensor c2 = shifted_cloud(150, 4, -3.0, 0.5, rng);
    novelty::LdaModel lda = novelty::fit_lda(c1, c2);
    novelty::HypothesisConfig cfg;
    novelty::CalibratedThresholds th = novelty::calibrate(lda, c1, c2, cfg, 8);

    // A batch sitting at the class means casts no vote.
    Tensor at_means({20, 4});
    for (std::size_t i = 0; i < 20; ++i) {
        at_means[i * 4] = (i % 2 == 0) ? 3.0f : -3.0f;
    }
    novelty::BatchDecision known = novelty::test_batch(lda, th, cfg, at_means);
    CHECK_FALSE(known.is_new_class);
    CHECK(known.votes <= th.t_vote);

    // A batch far from both means votes everywhere.
    Tensor far({20, 4});
    for (std::size_t i = 0; i < 20; ++i) far[i * 4 + 1] = 50.0f;
    novelty::BatchDecision novel = novelty::test_batch(lda, th, cfg, far);
    CHECK(novel.is_new_class);
    CHECK(novel.votes == 20);
    CHECK(novel.scores.size() == 20);

    // Wrong batch size is rejected.
    CHECK_THROWS_AS(novelty::test_batch(lda, th, cfg, Tensor({19, 4})), EngineError);
}

TEST_CASE("misidentification curve is monotone non-increasing") {
    Rng rng(9);
    Tensor c1 = shifted_cloud(100, 3, 1.0, 1.0, rng);
    Tensor c2 = shifted_cloud(100, 3, -1.0, 1.0, rng);
    novelty::LdaModel lda = novelty::fit_lda(c1, c2);
    novelty::HypothesisConfig cfg;
    for (auto sampling : {novelty::HypothesisConfig::NullSampling::mixed,
                          novelty::HypothesisConfig::NullSampling::per_class}) {
        cfg.sampling = sampling;
        novelty::CalibratedThresholds th = novelty::calibrate(lda, c1, c2, cfg, 10);
        for (std::size_t t = 1; t < th.misid_curve.size(); ++t) {
            CHECK(th.misid_curve[t] <= th.misid_curve[t - 1] + 1e-12);
        }
        CHECK(th.misid_curve[static_cast<std::size_t>(th.t_vote)] <= cfg.alpha);
    }
}

TEST_CASE("verdicts are invariant to increasing affine input maps") {
    Rng rng(11);
    const std::size_t d = 6;
    Tensor c1 = shifted_cloud(120, d, 2.0, 0.8, rng);
    Tensor c2 = shifted_cloud(120, d, -2.0, 0.8, rng);
    Tensor probe = shifted_cloud(40, d, 0.0, 2.5, rng);

    std::vector<double> scale(d), shift(d);
    for (std::size_t j = 0; j < d; ++j) {
        scale[j] = rng.uniform(0.5, 4.0);
        shift[j] = rng.uniform(-3.0, 3.0);
    }
    auto remap = [&](const Tensor& t) {
        Tensor out = t;
        for (std::size_t i = 0; i < t.dim(0); ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                out[i * d + j] = static_cast<float>(t[i * d + j] * scale[j] + shift[j]);
            }
        }
        return out;
    };

    novelty::HypothesisConfig cfg;
    cfg.batch_size = 10;
    novelty::LdaModel lda_a = novelty::fit_lda(c1, c2);
    novelty::CalibratedThresholds th_a = novelty::calibrate(lda_a, c1, c2, cfg, 13);
    novelty::LdaModel lda_b = novelty::fit_lda(remap(c1), remap(c2));
    novelty::CalibratedThresholds th_b = novelty::calibrate(lda_b, remap(c1), remap(c2), cfg, 13);

    Tensor probe_b = remap(probe);
    for (int batch = 0; batch < 4; ++batch) {
        Tensor ba({10, d}), bb({10, d});
        for (std::size_t i = 0; i < 10; ++i) {
            const std::size_t src = batch * 10 + i;
            std::copy(probe.data() + src * d, probe.data() + (src + 1) * d, ba.data() + i * d);
            std::copy(probe_b.data() + src * d, probe_b.data() + (src + 1) * d, bb.data() + i * d);
        }
        const auto va = novelty::test_batch(lda_a, th_a, cfg, ba);
        const auto vb = novelty::test_batch(lda_b, th_b, cfg, bb);
        CHECK(va.is_new_class == vb.is_new_class);
        CHECK(va.votes == vb.votes);
    }
}

TEST_CASE("rotation scenarios on Gaussian feature clouds") {
    // Three clusters on a line; each takes a turn as the unseen class.
    Rng rng(17);
    const std::size_t d = 8;
    std::vector<Tensor> clouds;
    for (double center : {-4.0, 0.0, 4.0}) {
        std::vector<double> mean(d, 0.0);
        mean[0] = center;
        mean[1] = center * 0.5;
        clouds.push_back(gaussian_cloud(160, mean, 0.6, rng));
    }
    novelty::HypothesisConfig cfg;
    for (int held = 0; held < 3; ++held) {
        const int a = held == 0 ? 1 : 0;
        const int b = held == 2 ? 1 : 2;
        novelty::LdaModel lda = novelty::fit_lda(clouds[a], clouds[b]);
        novelty::CalibratedThresholds th = novelty::calibrate(lda, clouds[a], clouds[b], cfg, 19);

        Rng trial_rng(100 + held);
        auto run_trials = [&](const Tensor& pool_a, const Tensor* pool_b) {
            int flagged = 0;
            for (int t = 0; t < 100; ++t) {
                Tensor batch({20, d});
                for (int i = 0; i < 20; ++i) {
                    const Tensor& pool = (pool_b && trial_rng.bernoulli(0.5)) ? *pool_b : pool_a;
                    const std::size_t r = trial_rng.below(pool.dim(0));
                    std::copy(pool.data() + r * d, pool.data() + (r + 1) * d,
                              batch.data() + static_cast<std::size_t>(i) * d);
                }
                flagged += novelty::test_batch(lda, th, cfg, batch).is_new_class ? 1 : 0;
            }
            return flagged;
        };
        const int detected = run_trials(clouds[held], nullptr);
        const int misid = run_trials(clouds[a], &clouds[b]);
        INFO("held ", held, ": detected ", detected, " misid ", misid);
        CHECK(detected >= 95);
        CHECK(misid <= 8);
    }
}
