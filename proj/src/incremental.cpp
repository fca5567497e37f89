#include "qlife/incremental.hpp"

#include <algorithm>

#include "qlife/errors.hpp"
#include "qlife/losses.hpp"
#include "qlife/optim.hpp"

namespace qlife::incremental {

void StageSchedule::validate() const {
    if (head_epochs < 1 || e2e_epochs < 1) throw ConfigError("stage epochs must be positive");
    if (head_lr <= 0.0f || e2e_lr <= 0.0f) throw ConfigError("stage learning rates must be positive");
}

model::QualityModel expand_head(const model::QualityModel& two_class,
                                const std::string& new_class_name, std::uint64_t seed) {
    if (two_class.num_classes() != 2) {
        throw EngineError("expand_head: model already has " +
                          std::to_string(two_class.num_classes()) + " classes, expected 2");
    }
    model::QualityModel out = two_class;
    Rng rng(seed);
    Dense head(static_cast<std::size_t>(out.config().embed_dim), 3);
    head.init_kaiming(rng);
    std::vector<std::string> labels = out.label_map();
    labels.push_back(new_class_name);
    out.replace_classifier(std::move(head), std::move(labels));
    return out;
}

data::Dataset build_rehearsal_set(const data::Dataset& new_samples,
                                  const data::Dataset& known_pool, int k, std::uint64_t seed,
                                  bool k_total_known) {
    if (k < 1) throw DataError("rehearsal shot count must be >= 1");
    if (new_samples.class_names.size() != known_pool.class_names.size()) {
        throw DataError("rehearsal: new-class and known-pool label maps differ");
    }
    Rng rng(seed);
    data::Dataset out;
    out.class_names = known_pool.class_names;
    out.domain_names = known_pool.domain_names;

    auto draw = [&](const data::Dataset& pool, int class_id, int count) {
        std::vector<int> idx = pool.indices_of_class(class_id);
        if (static_cast<int>(idx.size()) < count) {
            throw DataError("rehearsal: class '" +
                            pool.class_names.at(static_cast<std::size_t>(class_id)) + "' has " +
                            std::to_string(idx.size()) + " samples, need " + std::to_string(count));
        }
        rng.shuffle(idx);
        for (int i = 0; i < count; ++i) {
            out.samples.push_back(pool.samples[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
        }
    };

    // New class samples first (shot budget), then the replay draw.
    const int new_class = static_cast<int>(out.class_names.size()) - 1;
    draw(new_samples, new_class, k);

    std::vector<int> known_ids;
    for (int c = 0; c < new_class; ++c) known_ids.push_back(c);
    if (k_total_known) {
        // Alternative reading: K replay samples across all known classes.
        std::vector<int> idx;
        for (int c : known_ids) {
            for (int i : known_pool.indices_of_class(c)) idx.push_back(i);
        }
        if (static_cast<int>(idx.size()) < k) {
            throw DataError("rehearsal: known pool has " + std::to_string(idx.size()) +
                            " samples, need " + std::to_string(k));
        }
        rng.shuffle(idx);
        for (int i = 0; i < k; ++i) {
            out.samples.push_back(
                known_pool.samples[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
        }
    } else {
        for (int c : known_ids) draw(known_pool, c, k);
    }
    return out;
}

TwoStageHistory finetune_two_stage(model::QualityModel& model3, const data::Dataset& rehearsal,
                                   const StageSchedule& schedule, const model::TrainConfig& base) {
    schedule.validate();
    if (model3.num_classes() != static_cast<int>(rehearsal.class_names.size())) {
        throw EngineError("finetune_two_stage: model and rehearsal set class counts differ");
    }

    TwoStageHistory history;

    // Stage 1: head only. The optimizer sees just the classifier parameters,
    // and the backbone is checksummed to prove the freeze held.
    const std::uint64_t backbone_before = params_checksum(model3.backbone().params());
    {
        model::TrainConfig cfg = base;
        cfg.epochs = schedule.head_epochs;
        cfg.learning_rate = schedule.head_lr;
        Rng rng(cfg.seed);
        model3.reseed(rng.next_u64());
        Rng augment_rng = rng.fork(1);
        Optimizer opt(cfg.optimizer, cfg.learning_rate, cfg.momentum);
        auto params = model3.classifier().params();
        auto grads = model3.classifier().grads();

        std::vector<int> order(rehearsal.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            rng.shuffle(order);
            double loss_sum = 0.0;
            std::size_t batches = 0, correct = 0, seen = 0;
            for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
                const std::size_t stop =
                    std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size));
                const std::size_t b = stop - at;
                std::vector<int> labels;
                std::vector<Tensor> views;
                for (std::size_t i = at; i < stop; ++i) {
                    const auto& s = rehearsal.samples[static_cast<std::size_t>(order[i])];
                    labels.push_back(s.class_id);
                    auto [v1, v2] = data::augment_pair(s, cfg.augment, augment_rng);
                    views.push_back(std::move(v1));
                    views.push_back(std::move(v2));
                }
                std::vector<int> row_labels(labels);
                row_labels.insert(row_labels.end(), labels.begin(), labels.end());
                const auto& shp = views.front().shape();
                Tensor batch({2 * b, shp[0], shp[1], shp[2]});
                const std::size_t per = shape_numel(shp);
                for (std::size_t i = 0; i < b; ++i) {
                    std::copy(views[2 * i].data(), views[2 * i].data() + per, batch.data() + i * per);
                    std::copy(views[2 * i + 1].data(), views[2 * i + 1].data() + per,
                              batch.data() + (b + i) * per);
                }
                // Embeddings computed in eval mode: the frozen backbone must
                // not drift, and that includes batch-norm running stats.
                Tensor z = model3.backbone().infer(batch);
                model3.classifier().zero_grads();
                Tensor logits = model3.classifier().forward(z, Mode::train);
                Loss ce = cross_entropy(logits, row_labels);
                model3.classifier().backward(ce.grad);
                opt.step(params, grads);
                // The scale-consistency term stays in the objective; it has
                // no gradient w.r.t. the head, so it only shows in the loss.
                double scl_value = 0.0;
                const float scl_weight = model3.config().scl_weight;
                if (scl_weight > 0.0f) {
                    const std::size_t d = z.dim(1);
                    Tensor z1({b, d}), z2({b, d});
                    std::copy(z.data(), z.data() + b * d, z1.data());
                    std::copy(z.data() + b * d, z.data() + 2 * b * d, z2.data());
                    scl_value = scl_loss(z1, z2).value;
                }
                loss_sum += model::total_loss(ce.value, scl_value, scl_weight);
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
            model::EpochStats st;
            st.epoch = epoch;
            st.loss = st.ce = loss_sum / static_cast<double>(batches);
            st.accuracy = static_cast<double>(correct) / static_cast<double>(seen);
            history.head_stage.epochs.push_back(st);
        }
    }
    const std::uint64_t backbone_after = params_checksum(model3.backbone().params());
    if (backbone_before != backbone_after) {
        throw EngineError("finetune_two_stage: frozen backbone parameters drifted in stage 1");
    }

    // Stage 2: everything unfrozen at the conservative rate, same dual-view
    // and scale-consistency objective as baseline training. Batch-norm
    // statistics stay frozen: a 3K-sample set is far too small to re-estimate
    // them, and letting them drift wrecks the stage-1 head alignment.
    {
        std::vector<BatchNorm1d*> norms;
        for (std::size_t i = 0; i < model3.backbone().size(); ++i) {
            if (auto* bn = dynamic_cast<BatchNorm1d*>(&model3.backbone().layer(i))) {
                norms.push_back(bn);
                bn->set_freeze_stats(true);
            }
        }
        model::TrainConfig cfg = base;
        cfg.epochs = schedule.e2e_epochs;
        cfg.learning_rate = schedule.e2e_lr;
        cfg.seed = base.seed + 1;
        cfg.dual_view = true;
        history.e2e_stage = model::train_classifier(model3, rehearsal, cfg);
        for (BatchNorm1d* bn : norms) bn->set_freeze_stats(false);
    }
    return history;
}

model::TrainHistory baseline_finetune(model::QualityModel& fresh3,
                                      const data::Dataset& full_imbalanced,
                                      const model::TrainConfig& cfg) {
    if (fresh3.num_classes() != static_cast<int>(full_imbalanced.class_names.size())) {
        throw EngineError("baseline_finetune: model and dataset class counts differ");
    }
    model::TrainConfig plain = cfg;
    plain.dual_view = false;  // no dual views, no scale consistency loss
    return model::train_classifier(fresh3, full_imbalanced, plain);
}

}  // namespace qlife::incremental
