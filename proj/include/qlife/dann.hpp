#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "qlife/data.hpp"
#include "qlife/model.hpp"
#include "qlife/optim.hpp"

namespace qlife::dann {

struct DannConfig {
    float grl_lambda = 1.0f;       // gradient reversal strength on the feature path
    bool lambda_ramp = true;       // sigmoid ramp 0 -> grl_lambda over the adversarial phase
    bool lr_anneal = true;         // decay lr as (1 + 10p)^-0.75 over the adversarial phase
    // Class-only warmup: the reversal stays off while the features become
    // discriminative and the normalization statistics settle; the domain
    // head already trains (unreversed) so it starts the adversarial phase
    // near its optimum.
    int warmup_epochs = 10;
    // Batchnorm statistics freeze for the adversarial phase so the adversary
    // plays against the same embedding function evaluation uses.
    bool freeze_stats_after_warmup = true;
    float target_class_weight = 0.5f;  // w in L_cls = L_src + w * L_tgt
    bool labeled_target_in_domain_loss = true;
    int epochs = 40;
    int batch_size = 32;
    float learning_rate = 1e-3f;
    // The adversary trains faster than the extractor it chases.
    float domain_lr_scale = 10.0f;
    float momentum = 0.9f;
    std::string optimizer = "sgd";
    std::string domain_optimizer = "adam";  // the head tracks a convex objective
    std::uint64_t seed = 0;
    data::AugmentConfig augment;

    void validate() const;
};

// Shared backbone + class head (a QualityModel) plus a small domain head
// behind a gradient reversal layer. Both heads consume the same embedding.
class DannModel {
public:
    DannModel() = default;
    // domain_hidden 0 builds a linear domain head (embed -> 2).
    DannModel(const model::BackboneConfig& config, std::uint64_t seed, int domain_hidden = 64);
    explicit DannModel(model::QualityModel base, std::uint64_t domain_head_seed,
                       int domain_hidden = 64);

    model::QualityModel& base() { return base_; }
    const model::QualityModel& base() const { return base_; }
    Network& domain_head() { return domain_head_; }
    const Network& domain_head() const { return domain_head_; }
    GradientReversal& grl();

    std::vector<Tensor*> all_params();
    std::vector<Tensor*> all_grads();

    int domain_hidden() const { return domain_hidden_; }

private:
    void build_domain_head(std::uint64_t seed);

    model::QualityModel base_;
    int domain_hidden_ = 64;
    Network domain_head_;  // grl -> [dense(embed, hidden) -> relu ->] dense(.., 2)
};

struct StepLosses {
    double cls_source = 0.0;
    double cls_target = 0.0;
    double domain = 0.0;
    double total = 0.0;  // cls_source + w * cls_target + lambda * domain
};

// Paired optimizers: the domain head gets its own (faster) learning rate so
// the adversary stays near its optimum as the features move.
struct DannOptimizers {
    Optimizer main;    // backbone + class head
    Optimizer domain;  // domain head

    DannOptimizers(const DannConfig& cfg);
};

// One optimization step on the composite objective. Source and labeled
// target rows feed the class head (target rows weighted by w); every row
// feeds the domain head through the GRL. `target_unlabeled` may be empty.
StepLosses dann_step(DannModel& model, const Tensor& source_images,
                     std::span<const int> source_labels, const Tensor& target_labeled_images,
                     std::span<const int> target_labels, const Tensor& target_unlabeled_images,
                     const DannConfig& cfg, DannOptimizers& opt);

struct AdaptHistory {
    std::vector<StepLosses> epochs;  // per-epoch mean losses
};

// Full adaptation run: every epoch walks the source set once with equal-size
// source/target sub-batches; labeled target shots are sampled with
// replacement, unlabeled target rows join the domain loss only.
AdaptHistory adapt(DannModel& model, const data::Dataset& source_train,
                   const data::Dataset& target_few_shot, const data::Dataset& target_unlabeled,
                   const DannConfig& cfg);

// Accuracy of a freshly trained linear probe on frozen embeddings (70/30
// train/eval split). Used for the domain-invariance and class-separability
// checks.
double linear_probe_accuracy(const Tensor& embeddings, const std::vector<int>& labels,
                             int num_classes, std::uint64_t seed);

// Top-2 principal component projection of embedding rows, for plot export.
Tensor pca_project_2d(const Tensor& embeddings);

}  // namespace qlife::dann
