#include "qlife/novelty.hpp"

#include <algorithm>
#include <cmath>

#include "qlife/errors.hpp"
#include "qlife/rng.hpp"

namespace qlife::novelty {

namespace {

constexpr double kStdFloor = 1e-8;

// In-place Cholesky solve of A x = b for symmetric positive definite A
// (row-major d x d). Throws when A is not positive definite.
std::vector<double> cholesky_solve(std::vector<double> a, std::vector<double> b, std::size_t d) {
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double sum = a[i * d + j];
            for (std::size_t k = 0; k < j; ++k) sum -= a[i * d + k] * a[j * d + k];
            if (i == j) {
                if (sum <= 0.0) {
                    throw EngineError("within-class scatter is singular even after regularization");
                }
                a[i * d + i] = std::sqrt(sum);
            } else {
                a[i * d + j] = sum / a[j * d + j];
            }
        }
    }
    // Forward then backward substitution with the factor L (lower triangle).
    for (std::size_t i = 0; i < d; ++i) {
        double sum = b[i];
        for (std::size_t k = 0; k < i; ++k) sum -= a[i * d + k] * b[k];
        b[i] = sum / a[i * d + i];
    }
    for (std::size_t i = d; i-- > 0;) {
        double sum = b[i];
        for (std::size_t k = i + 1; k < d; ++k) sum -= a[k * d + i] * b[k];
        b[i] = sum / a[i * d + i];
    }
    return b;
}

struct ProjectionStats {
    double mean = 0.0;
    double var = 0.0;  // unbiased
    std::size_t n = 0;
};

ProjectionStats project_stats(const Tensor& features, const LdaModel& lda,
                              std::span<const double> direction) {
    const std::size_t n = features.dim(0), d = features.dim(1);
    ProjectionStats st;
    st.n = n;
    std::vector<double> proj(n);
    for (std::size_t i = 0; i < n; ++i) {
        double p = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            p += direction[j] * ((features[i * d + j] - lda.feature_mean[j]) / lda.feature_std[j]);
        }
        proj[i] = p;
        st.mean += p;
    }
    st.mean /= static_cast<double>(n);
    for (double p : proj) st.var += (p - st.mean) * (p - st.mean);
    st.var = n > 1 ? st.var / static_cast<double>(n - 1) : 0.0;
    return st;
}

}  // namespace

double LdaModel::project(std::span<const float> x) const {
    if (x.size() != direction.size()) {
        throw EngineError("lda projection: feature width " + std::to_string(x.size()) +
                          " does not match fitted dimension " + std::to_string(direction.size()));
    }
    double p = 0.0;
    for (std::size_t j = 0; j < direction.size(); ++j) {
        p += direction[j] * ((x[j] - feature_mean[j]) / feature_std[j]);
    }
    return p;
}

LdaModel fit_lda(const Tensor& class1_features, const Tensor& class2_features) {
    if (class1_features.rank() != 2 || class2_features.rank() != 2 ||
        class1_features.dim(1) != class2_features.dim(1)) {
        throw EngineError("fit_lda: feature matrices must be [n, d] with matching d");
    }
    const std::size_t d = class1_features.dim(1);
    const std::size_t n1 = class1_features.dim(0), n2 = class2_features.dim(0);
    if (n1 < 2 || n2 < 2) throw EngineError("fit_lda: both classes need at least 2 samples");

    LdaModel lda;
    lda.feature_mean.assign(d, 0.0);
    lda.feature_std.assign(d, 0.0);
    const std::size_t n = n1 + n2;
    auto accumulate = [&](const Tensor& t) {
        for (std::size_t i = 0; i < t.dim(0); ++i) {
            for (std::size_t j = 0; j < d; ++j) lda.feature_mean[j] += t[i * d + j];
        }
    };
    accumulate(class1_features);
    accumulate(class2_features);
    for (std::size_t j = 0; j < d; ++j) lda.feature_mean[j] /= static_cast<double>(n);
    auto accumulate_var = [&](const Tensor& t) {
        for (std::size_t i = 0; i < t.dim(0); ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                const double dev = t[i * d + j] - lda.feature_mean[j];
                lda.feature_std[j] += dev * dev;
            }
        }
    };
    accumulate_var(class1_features);
    accumulate_var(class2_features);
    for (std::size_t j = 0; j < d; ++j) {
        lda.feature_std[j] = std::sqrt(lda.feature_std[j] / static_cast<double>(n));
        if (lda.feature_std[j] < kStdFloor) lda.feature_std[j] = kStdFloor;
    }

    // Class means and within-class scatter on standardized data.
    std::vector<double> m1(d, 0.0), m2(d, 0.0);
    auto standardized = [&](const Tensor& t, std::size_t i, std::size_t j) {
        return (t[i * d + j] - lda.feature_mean[j]) / lda.feature_std[j];
    };
    for (std::size_t i = 0; i < n1; ++i) {
        for (std::size_t j = 0; j < d; ++j) m1[j] += standardized(class1_features, i, j);
    }
    for (std::size_t i = 0; i < n2; ++i) {
        for (std::size_t j = 0; j < d; ++j) m2[j] += standardized(class2_features, i, j);
    }
    for (std::size_t j = 0; j < d; ++j) {
        m1[j] /= static_cast<double>(n1);
        m2[j] /= static_cast<double>(n2);
    }
    std::vector<double> scatter(d * d, 0.0);
    std::vector<double> dev(d);
    auto add_scatter = [&](const Tensor& t, const std::vector<double>& mean) {
        for (std::size_t i = 0; i < t.dim(0); ++i) {
            for (std::size_t j = 0; j < d; ++j) dev[j] = standardized(t, i, j) - mean[j];
            for (std::size_t a = 0; a < d; ++a) {
                const double da = dev[a];
                if (da == 0.0) continue;
                double* row = scatter.data() + a * d;
                for (std::size_t b = 0; b < d; ++b) row[b] += da * dev[b];
            }
        }
    };
    add_scatter(class1_features, m1);
    add_scatter(class2_features, m2);

    double trace = 0.0;
    for (std::size_t j = 0; j < d; ++j) trace += scatter[j * d + j];
    const double ridge = 1e-6 * trace / static_cast<double>(d) + 1e-12;
    for (std::size_t j = 0; j < d; ++j) scatter[j * d + j] += ridge;

    std::vector<double> diff(d);
    for (std::size_t j = 0; j < d; ++j) diff[j] = m1[j] - m2[j];
    std::vector<double> w = cholesky_solve(std::move(scatter), std::move(diff), d);
    double norm = 0.0;
    for (double v : w) norm += v * v;
    norm = std::sqrt(norm);
    if (norm <= 0.0 || !std::isfinite(norm)) {
        throw EngineError("fit_lda: degenerate direction (classes indistinguishable)");
    }
    for (double& v : w) v /= norm;
    lda.direction = std::move(w);

    const ProjectionStats s1 = project_stats(class1_features, lda, lda.direction);
    const ProjectionStats s2 = project_stats(class2_features, lda, lda.direction);
    lda.mu1 = s1.mean;
    lda.mu2 = s2.mean;
    lda.pooled_var = (static_cast<double>(n1 - 1) * s1.var + static_cast<double>(n2 - 1) * s2.var) /
                     static_cast<double>(n1 + n2 - 2);
    if (lda.pooled_var < 1e-12) lda.pooled_var = 1e-12;
    if (std::fabs(lda.mu1 - lda.mu2) < 1e-6 * std::sqrt(lda.pooled_var)) {
        throw EngineError("fit_lda: projected class means coincide (degenerate training data)");
    }
    return lda;
}

double fisher_ratio(const Tensor& class1_features, const Tensor& class2_features,
                    const LdaModel& standardizer, std::span<const double> direction) {
    std::vector<double> dir(direction.begin(), direction.end());
    double norm = 0.0;
    for (double v : dir) norm += v * v;
    norm = std::sqrt(norm);
    if (norm <= 0.0) throw EngineError("fisher_ratio: zero direction");
    for (double& v : dir) v /= norm;
    const ProjectionStats s1 = project_stats(class1_features, standardizer, dir);
    const ProjectionStats s2 = project_stats(class2_features, standardizer, dir);
    const double pooled =
        (static_cast<double>(s1.n - 1) * s1.var + static_cast<double>(s2.n - 1) * s2.var) /
        static_cast<double>(s1.n + s2.n - 2);
    const double sep = s1.mean - s2.mean;
    return sep * sep / std::max(pooled, 1e-300);
}

double novelty_score(const LdaModel& lda, std::span<const float> x) {
    const double p = lda.project(x);
    const double d1 = (p - lda.mu1) * (p - lda.mu1);
    const double d2 = (p - lda.mu2) * (p - lda.mu2);
    return std::min(d1, d2) / lda.pooled_var;
}

std::vector<double> novelty_scores(const LdaModel& lda, const Tensor& features) {
    const std::size_t n = features.dim(0), d = features.dim(1);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = novelty_score(lda, std::span<const float>(features.data() + i * d, d));
    }
    return out;
}

double percentile(std::vector<double> values, double pct) {
    if (values.empty()) throw EngineError("percentile of empty value set");
    if (pct < 0.0 || pct > 100.0) throw EngineError("percentile must be in [0, 100]");
    std::sort(values.begin(), values.end());
    const double rank = pct / 100.0 * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(rank));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = rank - std::floor(rank);
    return values[lo] + frac * (values[hi] - values[lo]);
}

int vote_threshold_from_histogram(std::span<const double> vote_counts_pmf, double alpha,
                                  bool* satisfied) {
    const int n = static_cast<int>(vote_counts_pmf.size()) - 1;
    if (n < 0) throw EngineError("empty vote histogram");
    double tail = 0.0;
    std::vector<double> exceed(static_cast<std::size_t>(n) + 1, 0.0);
    for (int t = n; t >= 0; --t) {
        // P(V > t) = sum of pmf above t.
        if (t < n) tail += vote_counts_pmf[static_cast<std::size_t>(t) + 1];
        exceed[static_cast<std::size_t>(t)] = tail;
    }
    int chosen = n;
    for (int t = 0; t <= n; ++t) {
        if (exceed[static_cast<std::size_t>(t)] <= alpha) {
            chosen = t;
            break;
        }
    }
    // P(V > N) = 0, so t = N always qualifies; being forced there means the
    // test could never fire on any batch, which is the pathological case.
    if (satisfied) *satisfied = chosen < n;
    return chosen;
}

CalibratedThresholds calibrate(const LdaModel& lda, const Tensor& known1, const Tensor& known2,
                               const HypothesisConfig& cfg, std::uint64_t seed) {
    if (cfg.batch_size < 1) throw EngineError("batch size must be >= 1");
    if (cfg.alpha <= 0.0 || cfg.alpha >= 1.0) throw EngineError("alpha must be in (0, 1)");
    std::vector<double> scores1 = novelty_scores(lda, known1);
    std::vector<double> scores2 = novelty_scores(lda, known2);
    std::vector<double> all = scores1;
    all.insert(all.end(), scores2.begin(), scores2.end());
    if (all.size() < static_cast<std::size_t>(cfg.batch_size)) {
        throw EngineError("known pool smaller than one batch");
    }

    CalibratedThresholds out;
    out.t_sample = percentile(all, cfg.percentile);

    const std::size_t hist_size = static_cast<std::size_t>(cfg.batch_size) + 1;
    Rng rng(seed);
    auto simulate = [&](const std::vector<double>& pool) {
        std::vector<double> pmf(hist_size, 0.0);
        for (int trial = 0; trial < cfg.num_null_trials; ++trial) {
            int votes = 0;
            for (int i = 0; i < cfg.batch_size; ++i) {
                const double s = pool[static_cast<std::size_t>(rng.below(pool.size()))];
                if (s > out.t_sample) ++votes;
            }
            pmf[static_cast<std::size_t>(votes)] += 1.0;
        }
        for (double& p : pmf) p /= static_cast<double>(cfg.num_null_trials);
        return pmf;
    };

    if (cfg.sampling == HypothesisConfig::NullSampling::mixed) {
        out.null_vote_histogram = simulate(all);
        out.misid_curve.assign(hist_size, 0.0);
        double tail = 0.0;
        for (std::size_t t = hist_size; t-- > 0;) {
            if (t + 1 < hist_size) tail += out.null_vote_histogram[t + 1];
            out.misid_curve[t] = tail;
        }
    } else {
        // Per-class nulls; keep the most conservative (largest) rate per t.
        const std::vector<double> pmf1 = simulate(scores1);
        const std::vector<double> pmf2 = simulate(scores2);
        auto curve_of = [&](const std::vector<double>& pmf) {
            std::vector<double> curve(hist_size, 0.0);
            double tail = 0.0;
            for (std::size_t t = hist_size; t-- > 0;) {
                if (t + 1 < hist_size) tail += pmf[t + 1];
                curve[t] = tail;
            }
            return curve;
        };
        const std::vector<double> c1 = curve_of(pmf1), c2 = curve_of(pmf2);
        out.null_vote_histogram.assign(hist_size, 0.0);
        out.misid_curve.assign(hist_size, 0.0);
        for (std::size_t t = 0; t < hist_size; ++t) {
            out.null_vote_histogram[t] = 0.5 * (pmf1[t] + pmf2[t]);
            out.misid_curve[t] = std::max(c1[t], c2[t]);
        }
    }

    out.t_vote = vote_threshold_from_histogram(out.null_vote_histogram, cfg.alpha,
                                               &out.vote_rule_satisfied);
    if (cfg.sampling == HypothesisConfig::NullSampling::per_class) {
        // The conservative combined curve, not the averaged histogram,
        // drives the per-class threshold.
        int t = cfg.batch_size;
        for (int cand = 0; cand <= cfg.batch_size; ++cand) {
            if (out.misid_curve[static_cast<std::size_t>(cand)] <= cfg.alpha) {
                t = cand;
                break;
            }
        }
        out.t_vote = t;
        out.vote_rule_satisfied = t < cfg.batch_size;
    }
    return out;
}

BatchDecision test_batch(const LdaModel& lda, const CalibratedThresholds& thresholds,
                         const HypothesisConfig& cfg, const Tensor& batch) {
    if (batch.rank() != 2 || batch.dim(0) != static_cast<std::size_t>(cfg.batch_size)) {
        throw EngineError("test_batch: expected exactly " + std::to_string(cfg.batch_size) +
                          " rows, got " + batch.shape_str());
    }
    BatchDecision decision;
    decision.scores = novelty_scores(lda, batch);
    for (double s : decision.scores) {
        if (s > thresholds.t_sample) ++decision.votes;
    }
    decision.is_new_class = decision.votes > thresholds.t_vote;
    return decision;
}

ProjectionHistogram projection_histogram(const LdaModel& lda, const Tensor& features, double lo,
                                         double hi, int bins) {
    if (bins < 1 || hi <= lo) throw EngineError("projection_histogram: bad bin configuration");
    ProjectionHistogram out;
    out.counts.assign(static_cast<std::size_t>(bins), 0);
    const double width = (hi - lo) / bins;
    for (int b = 0; b < bins; ++b) out.bin_centers.push_back(lo + (b + 0.5) * width);
    const std::size_t n = features.dim(0), d = features.dim(1);
    for (std::size_t i = 0; i < n; ++i) {
        const double p = lda.project(std::span<const float>(features.data() + i * d, d));
        int b = static_cast<int>(std::floor((p - lo) / width));
        b = std::max(0, std::min(bins - 1, b));
        ++out.counts[static_cast<std::size_t>(b)];
    }
    return out;
}

}  // namespace qlife::novelty
