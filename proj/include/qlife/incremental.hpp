#pragma once

#include <cstdint>
#include <string>

#include "qlife/data.hpp"
#include "qlife/model.hpp"

namespace qlife::incremental {

struct StageSchedule {
    int head_epochs = 15;
    float head_lr = 1e-3f;
    int e2e_epochs = 15;
    float e2e_lr = 5e-5f;

    void validate() const;
};

// Copies the model, swaps the 2-class head for a freshly initialized 3-class
// head and appends the new class to the label map. Every backbone parameter
// stays bit-identical.
model::QualityModel expand_head(const model::QualityModel& two_class,
                                const std::string& new_class_name, std::uint64_t seed);

// Balanced 3K replay set: K samples of the new class plus K per known class
// drawn without replacement from the known training pool. Deterministic per
// seed. When `k_total_known` is set, K samples are drawn across both known
// classes together instead of K per class.
data::Dataset build_rehearsal_set(const data::Dataset& new_samples,
                                  const data::Dataset& known_pool, int k, std::uint64_t seed,
                                  bool k_total_known = false);

struct TwoStageHistory {
    model::TrainHistory head_stage;
    model::TrainHistory e2e_stage;
};

// Stage 1 trains only the classifier head (backbone asserted bit-identical
// afterwards); stage 2 fine-tunes everything at the conservative rate. Both
// stages keep the dual-view augmentation and scale consistency loss.
TwoStageHistory finetune_two_stage(model::QualityModel& model3, const data::Dataset& rehearsal,
                                   const StageSchedule& schedule, const model::TrainConfig& base);

// Comparison baseline: single-stage end-to-end training of a fresh model on
// the full imbalanced 3-class set, single view, no scale consistency loss.
model::TrainHistory baseline_finetune(model::QualityModel& fresh3,
                                      const data::Dataset& full_imbalanced,
                                      const model::TrainConfig& cfg);

}  // namespace qlife::incremental
