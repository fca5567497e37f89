#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qlife/tensor.hpp"

namespace qlife::novelty {

// Two-class Fisher discriminant reduced to one dimension, fitted on
// standardized features of the two known classes.
struct LdaModel {
    std::vector<double> feature_mean;  // standardization stats, length d
    std::vector<double> feature_std;
    std::vector<double> direction;     // unit vector, length d
    double mu1 = 0.0, mu2 = 0.0;       // projected class means
    double pooled_var = 1.0;           // pooled 1-D variance

    std::size_t dim() const { return direction.size(); }
    // Standardizes x with the stored stats and projects onto the axis.
    double project(std::span<const float> x) const;
};

// Fits standardization stats, the ridge-regularized Fisher direction
// S_W^-1 (m1 - m2), the projected class means and the pooled variance.
// Both classes need >= 2 samples; throws on degenerate (inseparable) data.
LdaModel fit_lda(const Tensor& class1_features, const Tensor& class2_features);

// Fisher criterion (between-class over within-class variance) of projecting
// the two standardized sample sets onto `direction`; used to cross-check
// fitted directions against random ones.
double fisher_ratio(const Tensor& class1_features, const Tensor& class2_features,
                    const LdaModel& standardizer, std::span<const double> direction);

// S(x): squared distance to the nearest projected class mean in pooled
// variance units. Nonnegative; zero exactly at the class means.
double novelty_score(const LdaModel& lda, std::span<const float> x);
std::vector<double> novelty_scores(const LdaModel& lda, const Tensor& features);

// Empirical percentile with linear interpolation between order statistics.
double percentile(std::vector<double> values, double pct);

struct HypothesisConfig {
    int batch_size = 20;       // N
    double percentile = 95.0;  // sample threshold percentile
    double alpha = 0.05;       // significance level
    int num_null_trials = 500;
    enum class NullSampling { mixed, per_class } sampling = NullSampling::mixed;
};

struct CalibratedThresholds {
    double t_sample = 0.0;
    int t_vote = 0;
    bool vote_rule_satisfied = true;        // false when no t met the alpha rule
    std::vector<double> null_vote_histogram;  // P(V = v), v in [0, N]
    std::vector<double> misid_curve;          // P(V > t), t in [0, N]
};

// Smallest t in [0, N] with P(V > t) <= alpha, from vote counts per trial.
// Returns N and clears `satisfied` when no t qualifies.
int vote_threshold_from_histogram(std::span<const double> vote_counts_pmf, double alpha,
                                  bool* satisfied = nullptr);

// Calibrates T_sample as the score percentile over all known samples, then
// simulates null batches of known samples (with replacement) to pick the
// vote threshold controlling the known-batch misidentification rate at
// alpha. Per-class sampling simulates each known class separately and takes
// the most conservative threshold.
CalibratedThresholds calibrate(const LdaModel& lda, const Tensor& known1, const Tensor& known2,
                               const HypothesisConfig& cfg, std::uint64_t seed);

struct BatchDecision {
    int votes = 0;
    bool is_new_class = false;
    std::vector<double> scores;
};

// Scores a batch of exactly cfg.batch_size feature rows and applies the
// calibrated vote rule: new class iff votes > t_vote.
BatchDecision test_batch(const LdaModel& lda, const CalibratedThresholds& thresholds,
                         const HypothesisConfig& cfg, const Tensor& batch);

// Histogram of projections for plot export: equal-width bins over
// [lo, hi], returning per-bin centers and counts.
struct ProjectionHistogram {
    std::vector<double> bin_centers;
    std::vector<int> counts;
};
ProjectionHistogram projection_histogram(const LdaModel& lda, const Tensor& features, double lo,
                                         double hi, int bins);

}  // namespace qlife::novelty
