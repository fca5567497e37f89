#include "qlife/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "qlife/errors.hpp"
#include "qlife/losses.hpp"
#include "qlife/optim.hpp"
#include "qlife/threading.hpp"

namespace qlife::model {

std::size_t BackboneConfig::spp_bins() const {
    std::size_t total = 0;
    for (int l : spp_levels) total += static_cast<std::size_t>(l) * static_cast<std::size_t>(l);
    return total;
}

std::size_t BackboneConfig::spp_output_dim() const {
    return static_cast<std::size_t>(conv_channels.back()) * spp_bins();
}

void BackboneConfig::validate() const {
    if (conv_channels.empty()) throw ConfigError("backbone needs at least one conv block");
    if (spp_levels.empty()) throw ConfigError("spp_levels must be nonempty");
    for (int l : spp_levels) {
        if (l < 1) throw ConfigError("spp levels must be >= 1");
    }
    if (embed_dim < 1) throw ConfigError("embed_dim must be >= 1");
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (scl_weight < 0.0f) throw ConfigError("scl_weight must be nonnegative");
    if (dropout_rate < 0.0f || dropout_rate >= 1.0f) throw ConfigError("dropout_rate must be in [0, 1)");
}

QualityModel::QualityModel(const BackboneConfig& config, std::uint64_t seed)
    : config_(config), classifier_(static_cast<std::size_t>(config.embed_dim),
                                   static_cast<std::size_t>(config.num_classes)) {
    config_.validate();
    Rng rng(seed);
    int prev = config_.image_channels;
    for (int ch : config_.conv_channels) {
        auto& conv = backbone_.emplace<Conv2d>(static_cast<std::size_t>(prev),
                                               static_cast<std::size_t>(ch),
                                               static_cast<std::size_t>(config_.conv_kernel),
                                               static_cast<std::size_t>(config_.conv_stride),
                                               static_cast<std::size_t>(config_.conv_padding));
        conv.init_kaiming(rng);
        backbone_.emplace<Relu>();
        prev = ch;
    }
    backbone_.emplace<SpatialPyramidPool>(config_.spp_levels);
    auto& proj = backbone_.emplace<Dense>(config_.spp_output_dim(),
                                          static_cast<std::size_t>(config_.embed_dim));
    proj.init_kaiming(rng);
    backbone_.emplace<Relu>();
    backbone_.emplace<Dropout>(config_.dropout_rate, rng.next_u64());
    backbone_.emplace<BatchNorm1d>(static_cast<std::size_t>(config_.embed_dim));
    classifier_.init_kaiming(rng);
    for (int c = 0; c < config_.num_classes; ++c) label_map_.push_back("class-" + std::to_string(c));
}

Tensor QualityModel::embed(const Tensor& images, Mode mode) {
    return backbone_.forward(images, mode);
}

Tensor QualityModel::embed_eval(const Tensor& images) const { return backbone_.infer(images); }

Tensor QualityModel::logits_eval(const Tensor& images) const {
    return classifier_.infer(backbone_.infer(images));
}

Tensor QualityModel::embed_dataset(const data::Dataset& ds, int threads) const {
    if (ds.empty()) throw DataError("embed_dataset: empty dataset");
    const std::size_t d = static_cast<std::size_t>(config_.embed_dim);
    Tensor out({ds.size(), d});
    parallel_chunks(ds.size(), threads, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const auto& s = ds.samples[i];
            if (s.precomputed()) {
                if (s.features.size() != d) {
                    throw DataError("precomputed sample '" + s.id + "' has width " +
                                    std::to_string(s.features.size()) + ", model embeds to " +
                                    std::to_string(d));
                }
                std::copy(s.features.data(), s.features.data() + d, out.data() + i * d);
            } else {
                const auto& shp = s.image.shape();
                Tensor batch = s.image.reshaped({1, shp[0], shp[1], shp[2]});
                Tensor z = backbone_.infer(batch);
                std::copy(z.data(), z.data() + d, out.data() + i * d);
            }
        }
    });
    return out;
}

void QualityModel::replace_classifier(Dense head, std::vector<std::string> label_map) {
    if (head.in_features() != static_cast<std::size_t>(config_.embed_dim)) {
        throw EngineError("replacement head input width does not match embed_dim");
    }
    if (head.out_features() != label_map.size()) {
        throw EngineError("replacement head width does not match label map size");
    }
    classifier_ = std::move(head);
    label_map_ = std::move(label_map);
    config_.num_classes = static_cast<int>(label_map_.size());
}

std::vector<Tensor*> QualityModel::all_params() {
    auto out = backbone_.params();
    for (Tensor* p : classifier_.params()) out.push_back(p);
    return out;
}

std::vector<Tensor*> QualityModel::all_grads() {
    auto out = backbone_.grads();
    for (Tensor* g : classifier_.grads()) out.push_back(g);
    return out;
}

std::vector<Tensor*> QualityModel::all_state() { return backbone_.state(); }

void QualityModel::reseed(std::uint64_t seed) { backbone_.reseed(seed); }

double total_loss(double ce, double scl, float scl_weight) {
    return ce + static_cast<double>(scl_weight) * scl;
}

namespace {

Tensor stack_images(const std::vector<Tensor>& views) {
    const auto& shp = views.front().shape();
    Tensor out({views.size(), shp[0], shp[1], shp[2]});
    const std::size_t per = shape_numel(shp);
    for (std::size_t i = 0; i < views.size(); ++i) {
        if (views[i].shape() != shp) {
            throw DataError("cannot batch images of differing shapes (" + views[i].shape_str() +
                            " vs " + views.front().shape_str() + ")");
        }
        std::copy(views[i].data(), views[i].data() + per, out.data() + i * per);
    }
    return out;
}

}  // namespace

TrainHistory train_classifier(QualityModel& model, const data::Dataset& trainset,
                              const TrainConfig& cfg) {
    if (trainset.empty()) throw DataError("training set is empty");
    for (const auto& s : trainset.samples) {
        if (s.class_id < 0 || s.class_id >= model.num_classes()) {
            throw DataError("sample '" + s.id + "' has class id " + std::to_string(s.class_id) +
                            " outside the model's " + std::to_string(model.num_classes()) +
                            " classes");
        }
        if (s.precomputed()) {
            throw DataError("cannot train on precomputed-feature sample '" + s.id + "'");
        }
    }
    Rng rng(cfg.seed);
    model.reseed(rng.next_u64());
    Rng augment_rng = rng.fork(1);
    Optimizer opt(cfg.optimizer, cfg.learning_rate, cfg.momentum);
    auto params = model.all_params();
    auto grads = model.all_grads();

    const float scl_weight = model.config().scl_weight;
    const bool use_scl = cfg.dual_view && scl_weight > 0.0f;
    TrainHistory history;

    std::vector<int> order(trainset.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0, epoch_ce = 0.0, epoch_scl = 0.0;
        std::size_t correct = 0, seen = 0, batches = 0;
        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop = std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size));
            const std::size_t b = stop - at;
            std::vector<Tensor> views;
            std::vector<int> labels;
            views.reserve(cfg.dual_view ? 2 * b : b);
            for (std::size_t i = at; i < stop; ++i) {
                const auto& s = trainset.samples[static_cast<std::size_t>(order[i])];
                labels.push_back(s.class_id);
                if (cfg.dual_view) {
                    auto [v1, v2] = data::augment_pair(s, cfg.augment, augment_rng);
                    views.push_back(std::move(v1));
                    views.push_back(std::move(v2));
                } else {
                    views.push_back(data::augment_view(s.image, cfg.augment, augment_rng));
                }
            }
            // Dual views are stacked [v1_0, .., v1_{b-1}, v2_0, .., v2_{b-1}]
            // so one forward covers both; CE over all rows equals the average
            // of the per-view CE losses.
            std::vector<Tensor> ordered;
            std::vector<int> row_labels;
            if (cfg.dual_view) {
                ordered.reserve(2 * b);
                for (std::size_t i = 0; i < b; ++i) ordered.push_back(std::move(views[2 * i]));
                for (std::size_t i = 0; i < b; ++i) ordered.push_back(std::move(views[2 * i + 1]));
                row_labels = labels;
                row_labels.insert(row_labels.end(), labels.begin(), labels.end());
            } else {
                ordered = std::move(views);
                row_labels = labels;
            }
            Tensor batch = stack_images(ordered);

            model.backbone().zero_grads();
            model.classifier().zero_grads();

            Tensor z = model.embed(batch, Mode::train);
            Tensor logits = model.classifier().forward(z, Mode::train);
            Loss ce = cross_entropy(logits, row_labels);

            double scl_value = 0.0;
            Tensor grad_z = model.classifier().backward(ce.grad);
            if (use_scl) {
                const std::size_t d = z.dim(1);
                Tensor z1({b, d}), z2({b, d});
                std::copy(z.data(), z.data() + b * d, z1.data());
                std::copy(z.data() + b * d, z.data() + 2 * b * d, z2.data());
                PairLoss scl = scl_loss(z1, z2);
                scl_value = scl.value;
                for (std::size_t i = 0; i < b * d; ++i) {
                    grad_z[i] += scl_weight * scl.grad_a[i];
                    grad_z[b * d + i] += scl_weight * scl.grad_b[i];
                }
            }
            model.backbone().backward(grad_z);
            opt.step(params, grads);

            const double batch_total = total_loss(ce.value, scl_value, use_scl ? scl_weight : 0.0f);
            epoch_loss += batch_total;
            epoch_ce += ce.value;
            epoch_scl += scl_value;
            ++batches;
            for (std::size_t i = 0; i < b; ++i) {
                const float* row = logits.data() + i * logits.dim(1);
                std::size_t arg = 0;
                for (std::size_t j = 1; j < logits.dim(1); ++j) {
                    if (row[j] > row[arg]) arg = j;
                }
                if (static_cast<int>(arg) == labels[i]) ++correct;
                ++seen;
            }
        }
        EpochStats stats;
        stats.epoch = epoch;
        stats.loss = epoch_loss / static_cast<double>(batches);
        stats.ce = epoch_ce / static_cast<double>(batches);
        stats.scl = epoch_scl / static_cast<double>(batches);
        stats.accuracy = static_cast<double>(correct) / static_cast<double>(seen);
        history.epochs.push_back(stats);
    }
    return history;
}

TrainHistory train_baseline(QualityModel& model, const data::Dataset& trainset,
                            const TrainConfig& cfg) {
    std::vector<int> counts(static_cast<std::size_t>(model.num_classes()), 0);
    for (const auto& s : trainset.samples) {
        if (s.class_id >= 0 && s.class_id < model.num_classes()) {
            ++counts[static_cast<std::size_t>(s.class_id)];
        }
    }
    int present = 0;
    for (int c : counts) present += (c > 0) ? 1 : 0;
    if (present < 2) {
        throw DataError("baseline training needs at least 2 classes present, found " +
                        std::to_string(present));
    }
    return train_classifier(model, trainset, cfg);
}

std::vector<int> predict(const QualityModel& model, const data::Dataset& ds, int threads) {
    if (ds.empty()) throw DataError("predict: empty dataset");
    Tensor z = model.embed_dataset(ds, threads);
    Tensor logits = model.classifier().infer(z);
    std::vector<int> out(ds.size());
    const std::size_t k = logits.dim(1);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const float* row = logits.data() + i * k;
        std::size_t arg = 0;
        for (std::size_t j = 1; j < k; ++j) {
            if (row[j] > row[arg]) arg = j;
        }
        out[i] = static_cast<int>(arg);
    }
    return out;
}

EvalResult evaluate(const QualityModel& model, const data::Dataset& ds, int threads) {
    if (ds.empty()) throw DataError("evaluate: empty dataset");
    const int k = model.num_classes();
    // Map dataset class ids to model label indices by name.
    std::vector<int> to_model(ds.class_names.size(), -1);
    for (std::size_t c = 0; c < ds.class_names.size(); ++c) {
        for (int m = 0; m < k; ++m) {
            if (model.label_map()[static_cast<std::size_t>(m)] == ds.class_names[c]) {
                to_model[c] = m;
            }
        }
    }
    for (const auto& s : ds.samples) {
        if (to_model[static_cast<std::size_t>(s.class_id)] < 0) {
            throw DataError("dataset class '" + ds.class_names[static_cast<std::size_t>(s.class_id)] +
                            "' is not in the model's label map");
        }
    }
    const std::vector<int> preds = predict(model, ds, threads);
    EvalResult result;
    result.confusion.assign(static_cast<std::size_t>(k), std::vector<int>(static_cast<std::size_t>(k), 0));
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const int truth = to_model[static_cast<std::size_t>(ds.samples[i].class_id)];
        ++result.confusion[static_cast<std::size_t>(truth)][static_cast<std::size_t>(preds[i])];
    }
    result.total = static_cast<int>(ds.size());
    int trace = 0;
    for (int c = 0; c < k; ++c) {
        const auto& row = result.confusion[static_cast<std::size_t>(c)];
        const int row_total = std::accumulate(row.begin(), row.end(), 0);
        trace += row[static_cast<std::size_t>(c)];
        result.per_class_recall.push_back(
            row_total > 0 ? static_cast<double>(row[static_cast<std::size_t>(c)]) / row_total : 0.0);
    }
    result.accuracy = static_cast<double>(trace) / static_cast<double>(result.total);
    return result;
}

}  // namespace qlife::model
