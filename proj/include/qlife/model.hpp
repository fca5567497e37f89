#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qlife/data.hpp"
#include "qlife/layers.hpp"
#include "qlife/tensor.hpp"

namespace qlife::model {

struct BackboneConfig {
    int image_channels = 1;
    std::vector<int> conv_channels = {8, 16, 32};  // stride-2 blocks, 3x3 kernels
    int conv_kernel = 3;
    int conv_stride = 2;
    int conv_padding = 1;
    std::vector<int> spp_levels = {4, 2, 1};
    int embed_dim = 512;
    int num_classes = 2;
    float scl_weight = 0.1f;
    float dropout_rate = 0.5f;

    std::size_t spp_bins() const;        // sum of level^2
    std::size_t spp_output_dim() const;  // last conv channels * spp_bins
    void validate() const;
};

// Feature extractor -> spatial pyramid pooling -> feature processor, ending
// in a fixed-width embedding, plus a linear classifier head on top.
class QualityModel {
public:
    QualityModel() = default;
    QualityModel(const BackboneConfig& config, std::uint64_t seed);

    Tensor embed(const Tensor& images, Mode mode);  // [n, embed_dim]
    Tensor embed_eval(const Tensor& images) const;
    Tensor logits_eval(const Tensor& images) const;

    // Embeds a dataset in eval mode. Precomputed-feature samples pass
    // through unchanged (their width must equal embed_dim).
    Tensor embed_dataset(const data::Dataset& ds, int threads = 1) const;

    Network& backbone() { return backbone_; }
    const Network& backbone() const { return backbone_; }
    Dense& classifier() { return classifier_; }
    const Dense& classifier() const { return classifier_; }
    void replace_classifier(Dense head, std::vector<std::string> label_map);

    const BackboneConfig& config() const { return config_; }
    std::vector<std::string>& label_map() { return label_map_; }
    const std::vector<std::string>& label_map() const { return label_map_; }
    int num_classes() const { return static_cast<int>(label_map_.size()); }

    std::vector<Tensor*> all_params();
    std::vector<Tensor*> all_grads();
    std::vector<Tensor*> all_state();
    void reseed(std::uint64_t seed);

private:
    BackboneConfig config_;
    Network backbone_;
    Dense classifier_{1, 1};
    std::vector<std::string> label_map_;
};

struct TrainConfig {
    int epochs = 30;
    int batch_size = 32;
    float learning_rate = 1e-3f;
    float momentum = 0.9f;
    std::string optimizer = "sgd";
    std::uint64_t seed = 0;
    data::AugmentConfig augment;
    bool dual_view = true;  // two views + scale consistency loss
};

struct EpochStats {
    int epoch = 0;
    double loss = 0.0;      // combined objective
    double ce = 0.0;        // cross-entropy part
    double scl = 0.0;       // scale-consistency part
    double accuracy = 0.0;  // training accuracy, view 1
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
};

// Combined objective for one batch: averaged cross-entropy over both views
// plus scl_weight times the scale consistency loss.
double total_loss(double ce, double scl, float scl_weight);

// Supervised training with dual-view augmentation. The dataset's class ids
// must already index the model's label map directly.
TrainHistory train_classifier(QualityModel& model, const data::Dataset& trainset,
                              const TrainConfig& cfg);

// Baseline 2-class training: requires the dataset to contain exactly the
// model's classes, each with at least one sample.
TrainHistory train_baseline(QualityModel& model, const data::Dataset& trainset,
                            const TrainConfig& cfg);

struct EvalResult {
    std::vector<std::vector<int>> confusion;  // [true][predicted]
    double accuracy = 0.0;
    std::vector<double> per_class_recall;
    int total = 0;
};

// Eval-mode evaluation, parallelized across samples up to `threads`.
// Dataset class names must all appear in the model's label map.
EvalResult evaluate(const QualityModel& model, const data::Dataset& ds, int threads = 1);

// Argmax predictions in eval mode, one per sample.
std::vector<int> predict(const QualityModel& model, const data::Dataset& ds, int threads = 1);

}  // namespace qlife::model
