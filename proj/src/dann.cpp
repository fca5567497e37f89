#include "qlife/dann.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "qlife/errors.hpp"
#include "qlife/losses.hpp"
#include "qlife/optim.hpp"

namespace qlife::dann {

void DannConfig::validate() const {
    if (grl_lambda < 0.0f) throw ConfigError("grl_lambda must be nonnegative");
    if (target_class_weight < 0.0f) throw ConfigError("target class weight must be nonnegative");
    if (epochs < 1 || batch_size < 2) throw ConfigError("dann needs epochs >= 1 and batch size >= 2");
}

DannModel::DannModel(const model::BackboneConfig& config, std::uint64_t seed, int domain_hidden)
    : base_(config, seed), domain_hidden_(domain_hidden) {
    build_domain_head(seed + 0x5eed);
}

DannModel::DannModel(model::QualityModel base, std::uint64_t domain_head_seed, int domain_hidden)
    : base_(std::move(base)), domain_hidden_(domain_hidden) {
    build_domain_head(domain_head_seed);
}

void DannModel::build_domain_head(std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t d = static_cast<std::size_t>(base_.config().embed_dim);
    domain_head_.emplace<GradientReversal>(1.0f);
    if (domain_hidden_ > 0) {
        auto& h1 = domain_head_.emplace<Dense>(d, static_cast<std::size_t>(domain_hidden_));
        h1.init_kaiming(rng);
        domain_head_.emplace<Relu>();
        auto& h2 = domain_head_.emplace<Dense>(static_cast<std::size_t>(domain_hidden_), 2);
        h2.init_kaiming(rng);
    } else {
        auto& h = domain_head_.emplace<Dense>(d, 2);
        h.init_kaiming(rng);
    }
}

GradientReversal& DannModel::grl() {
    return static_cast<GradientReversal&>(domain_head_.layer(0));
}

std::vector<Tensor*> DannModel::all_params() {
    auto out = base_.all_params();
    for (Tensor* p : domain_head_.params()) out.push_back(p);
    return out;
}

std::vector<Tensor*> DannModel::all_grads() {
    auto out = base_.all_grads();
    for (Tensor* g : domain_head_.grads()) out.push_back(g);
    return out;
}

namespace {

Tensor concat_rows(const std::vector<const Tensor*>& parts) {
    std::vector<std::size_t> shape;
    std::size_t rows = 0;
    for (const Tensor* p : parts) {
        if (p->empty()) continue;
        if (shape.empty()) {
            shape = p->shape();
        } else if (std::vector<std::size_t>(p->shape().begin() + 1, p->shape().end()) !=
                   std::vector<std::size_t>(shape.begin() + 1, shape.end())) {
            throw EngineError("dann_step: batch groups have differing sample shapes");
        }
        rows += p->dim(0);
    }
    if (rows == 0) throw EngineError("dann_step: empty combined batch");
    shape[0] = rows;
    Tensor out(shape);
    std::size_t offset = 0;
    for (const Tensor* p : parts) {
        if (p->empty()) continue;
        std::copy(p->data(), p->data() + p->size(), out.data() + offset);
        offset += p->size();
    }
    return out;
}

}  // namespace

DannOptimizers::DannOptimizers(const DannConfig& cfg)
    : main(cfg.optimizer, cfg.learning_rate, cfg.momentum),
      domain(cfg.domain_optimizer, cfg.learning_rate * cfg.domain_lr_scale, cfg.momentum) {}

StepLosses dann_step(DannModel& model, const Tensor& source_images,
                     std::span<const int> source_labels, const Tensor& target_labeled_images,
                     std::span<const int> target_labels, const Tensor& target_unlabeled_images,
                     const DannConfig& cfg, DannOptimizers& opt) {
    const std::size_t n_src = source_images.empty() ? 0 : source_images.dim(0);
    const std::size_t n_tgt = target_labeled_images.empty() ? 0 : target_labeled_images.dim(0);
    const std::size_t n_unl = target_unlabeled_images.empty() ? 0 : target_unlabeled_images.dim(0);
    if (n_src == 0 || n_tgt == 0) {
        throw EngineError("dann_step: source and labeled target batches must be nonempty");
    }
    if (source_labels.size() != n_src || target_labels.size() != n_tgt) {
        throw EngineError("dann_step: label count mismatch");
    }
    const std::size_t n_all = n_src + n_tgt + n_unl;

    Tensor batch = concat_rows({&source_images, &target_labeled_images, &target_unlabeled_images});

    Tensor z = model.base().embed(batch, Mode::train);
    Tensor cls_logits = model.base().classifier().forward(z, Mode::train);

    // Class loss: source rows averaged with weight 1, labeled target rows
    // with weight w; unlabeled rows do not contribute.
    std::vector<int> cls_labels(n_all, -1);
    std::vector<double> cls_weights(n_all, 0.0);
    for (std::size_t i = 0; i < n_src; ++i) {
        cls_labels[i] = source_labels[i];
        cls_weights[i] = 1.0 / static_cast<double>(n_src);
    }
    for (std::size_t i = 0; i < n_tgt; ++i) {
        cls_labels[n_src + i] = target_labels[i];
        cls_weights[n_src + i] = static_cast<double>(cfg.target_class_weight) / static_cast<double>(n_tgt);
    }
    Loss cls = cross_entropy_weighted(cls_logits, cls_labels, cls_weights);

    // Separate unweighted values for reporting.
    std::vector<double> src_only(n_all, 0.0), tgt_only(n_all, 0.0);
    for (std::size_t i = 0; i < n_src; ++i) src_only[i] = 1.0 / static_cast<double>(n_src);
    for (std::size_t i = 0; i < n_tgt; ++i) tgt_only[n_src + i] = 1.0 / static_cast<double>(n_tgt);
    StepLosses losses;
    losses.cls_source = cross_entropy_weighted(cls_logits, cls_labels, src_only).value;
    losses.cls_target = cross_entropy_weighted(cls_logits, cls_labels, tgt_only).value;

    // Domain loss over every participating row; the GRL handles the lambda
    // scaling on the feature path, so head gradients stay unscaled.
    Tensor dom_logits = model.domain_head().forward(z, Mode::train);
    std::vector<int> dom_labels(n_all, 1);
    for (std::size_t i = 0; i < n_src; ++i) dom_labels[i] = 0;
    std::vector<double> dom_weights(n_all, 0.0);
    std::size_t dom_rows = n_all;
    if (!cfg.labeled_target_in_domain_loss) dom_rows -= n_tgt;
    for (std::size_t i = 0; i < n_all; ++i) {
        const bool is_labeled_target = i >= n_src && i < n_src + n_tgt;
        if (is_labeled_target && !cfg.labeled_target_in_domain_loss) continue;
        dom_weights[i] = 1.0 / static_cast<double>(dom_rows);
    }
    Loss dom = cross_entropy_weighted(dom_logits, dom_labels, dom_weights);
    losses.domain = dom.value;
    losses.total = losses.cls_source +
                   static_cast<double>(cfg.target_class_weight) * losses.cls_target +
                   static_cast<double>(model.grl().lambda()) * losses.domain;
    if (!std::isfinite(losses.total)) {
        throw EngineError("dann_step: non-finite loss (cls_src=" + std::to_string(losses.cls_source) +
                          " cls_tgt=" + std::to_string(losses.cls_target) +
                          " dom=" + std::to_string(losses.domain) + ")");
    }

    model.base().backbone().zero_grads();
    model.base().classifier().zero_grads();
    model.domain_head().zero_grads();

    Tensor gz = model.base().classifier().backward(cls.grad);
    Tensor gz_dom = model.domain_head().backward(dom.grad);
    for (std::size_t i = 0; i < gz.size(); ++i) gz[i] += gz_dom[i];
    model.base().backbone().backward(gz);

    auto main_params = model.base().all_params();
    auto main_grads = model.base().all_grads();
    opt.main.step(main_params, main_grads);
    auto dom_params = model.domain_head().params();
    auto dom_grads = model.domain_head().grads();
    opt.domain.step(dom_params, dom_grads);
    return losses;
}

AdaptHistory adapt(DannModel& model, const data::Dataset& source_train,
                   const data::Dataset& target_few_shot, const data::Dataset& target_unlabeled,
                   const DannConfig& cfg) {
    cfg.validate();
    const int k = model.base().num_classes();
    {
        std::vector<int> counts(static_cast<std::size_t>(k), 0);
        for (const auto& s : source_train.samples) {
            if (s.class_id >= 0 && s.class_id < k) ++counts[static_cast<std::size_t>(s.class_id)];
        }
        for (int c = 0; c < k; ++c) {
            if (counts[static_cast<std::size_t>(c)] == 0) {
                throw DataError("adapt: source set is missing class '" +
                                source_train.class_names.at(static_cast<std::size_t>(c)) + "'");
            }
        }
    }
    if (target_few_shot.empty()) throw DataError("adapt: few-shot target set is empty");

    Rng rng(cfg.seed);
    model.base().reseed(rng.next_u64());
    Rng augment_rng = rng.fork(1);
    DannOptimizers opt(cfg);

    const std::size_t half = std::max<std::size_t>(1, static_cast<std::size_t>(cfg.batch_size) / 2);
    std::vector<int> source_order(source_train.size());
    std::iota(source_order.begin(), source_order.end(), 0);

    std::vector<BatchNorm1d*> norms;
    for (std::size_t i = 0; i < model.base().backbone().size(); ++i) {
        if (auto* bn = dynamic_cast<BatchNorm1d*>(&model.base().backbone().layer(i))) {
            norms.push_back(bn);
        }
    }
    const int warmup = std::min(cfg.warmup_epochs, cfg.epochs - 1);
    AdaptHistory history;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const bool adversarial = epoch >= warmup;
        const int span = std::max(1, cfg.epochs - warmup - 1);
        const double progress =
            adversarial ? static_cast<double>(epoch - warmup) / static_cast<double>(span) : 0.0;
        if (!adversarial) {
            model.grl().set_lambda(0.0f);
        } else if (cfg.lambda_ramp) {
            const double ramp = 2.0 / (1.0 + std::exp(-10.0 * progress)) - 1.0;
            model.grl().set_lambda(static_cast<float>(cfg.grl_lambda * ramp));
        } else {
            model.grl().set_lambda(cfg.grl_lambda);
        }
        if (cfg.lr_anneal && adversarial) {
            const float decay = static_cast<float>(std::pow(1.0 + 10.0 * progress, -0.75));
            opt.main.set_learning_rate(cfg.learning_rate * decay);
            opt.domain.set_learning_rate(cfg.learning_rate * cfg.domain_lr_scale * decay);
        }
        if (cfg.freeze_stats_after_warmup) {
            for (BatchNorm1d* bn : norms) bn->set_freeze_stats(adversarial && epoch > 0);
        }
        rng.shuffle(source_order);
        StepLosses epoch_mean;
        std::size_t steps = 0;
        for (std::size_t at = 0; at < source_order.size(); at += half) {
            const std::size_t stop = std::min(source_order.size(), at + half);
            const std::size_t b_src = stop - at;

            std::vector<Tensor> src_views;
            std::vector<int> src_labels;
            for (std::size_t i = at; i < stop; ++i) {
                const auto& s = source_train.samples[static_cast<std::size_t>(source_order[i])];
                src_views.push_back(data::augment_view(s.image, cfg.augment, augment_rng));
                src_labels.push_back(s.class_id);
            }

            // Target half: labeled shots resampled with replacement, plus
            // unlabeled pool rows. The unlabeled rows dominate when a pool
            // exists so the domain adversary sees target variety beyond the
            // few labeled shots.
            const std::size_t b_tgt_total = b_src;
            const std::size_t b_unl =
                target_unlabeled.empty() ? 0 : std::min(3 * b_tgt_total / 4, target_unlabeled.size());
            const std::size_t b_tgt = std::max<std::size_t>(1, b_tgt_total - b_unl);
            std::vector<Tensor> tgt_views;
            std::vector<int> tgt_labels;
            for (std::size_t i = 0; i < b_tgt; ++i) {
                const auto& s =
                    target_few_shot.samples[static_cast<std::size_t>(rng.below(target_few_shot.size()))];
                tgt_views.push_back(data::augment_view(s.image, cfg.augment, augment_rng));
                tgt_labels.push_back(s.class_id);
            }
            std::vector<Tensor> unl_views;
            for (std::size_t i = 0; i < b_unl; ++i) {
                const auto& s =
                    target_unlabeled.samples[static_cast<std::size_t>(rng.below(target_unlabeled.size()))];
                unl_views.push_back(data::augment_view(s.image, cfg.augment, augment_rng));
            }

            auto stack = [](const std::vector<Tensor>& views) {
                if (views.empty()) return Tensor();
                const auto& shp = views.front().shape();
                Tensor out({views.size(), shp[0], shp[1], shp[2]});
                const std::size_t per = shape_numel(shp);
                for (std::size_t i = 0; i < views.size(); ++i) {
                    std::copy(views[i].data(), views[i].data() + per, out.data() + i * per);
                }
                return out;
            };
            const StepLosses step = dann_step(model, stack(src_views), src_labels, stack(tgt_views),
                                              tgt_labels, stack(unl_views), cfg, opt);
            epoch_mean.cls_source += step.cls_source;
            epoch_mean.cls_target += step.cls_target;
            epoch_mean.domain += step.domain;
            epoch_mean.total += step.total;
            ++steps;
        }
        epoch_mean.cls_source /= static_cast<double>(steps);
        epoch_mean.cls_target /= static_cast<double>(steps);
        epoch_mean.domain /= static_cast<double>(steps);
        epoch_mean.total /= static_cast<double>(steps);
        history.epochs.push_back(epoch_mean);
    }
    for (BatchNorm1d* bn : norms) bn->set_freeze_stats(false);
    return history;
}

double linear_probe_accuracy(const Tensor& embeddings, const std::vector<int>& labels,
                             int num_classes, std::uint64_t seed) {
    const std::size_t n = embeddings.dim(0), d = embeddings.dim(1);
    if (labels.size() != n || n < 4) throw EngineError("linear_probe: bad inputs");
    Rng rng(seed);
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    const std::size_t n_train = std::max<std::size_t>(1, (n * 7) / 10);
    const std::size_t n_eval = n - n_train;
    if (n_eval == 0) throw EngineError("linear_probe: no eval rows");

    auto gather = [&](std::size_t begin, std::size_t end, Tensor& x, std::vector<int>& y) {
        x = Tensor({end - begin, d});
        y.resize(end - begin);
        for (std::size_t i = begin; i < end; ++i) {
            const std::size_t src = static_cast<std::size_t>(order[i]);
            std::copy(embeddings.data() + src * d, embeddings.data() + (src + 1) * d,
                      x.data() + (i - begin) * d);
            y[i - begin] = labels[src];
        }
    };
    Tensor x_train, x_eval;
    std::vector<int> y_train, y_eval;
    gather(0, n_train, x_train, y_train);
    gather(n_train, n, x_eval, y_eval);

    Dense probe(d, static_cast<std::size_t>(num_classes));
    probe.init_kaiming(rng);
    SgdOptimizer opt(0.1f, 0.9f);
    for (int step = 0; step < 300; ++step) {
        probe.zero_grads();
        Tensor logits = probe.forward(x_train, Mode::train);
        Loss ce = cross_entropy(logits, y_train);
        probe.backward(ce.grad);
        auto params = probe.params();
        auto grads = probe.grads();
        opt.step(params, grads);
    }
    Tensor logits = probe.infer(x_eval);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n_eval; ++i) {
        const float* row = logits.data() + i * static_cast<std::size_t>(num_classes);
        std::size_t arg = 0;
        for (std::size_t j = 1; j < static_cast<std::size_t>(num_classes); ++j) {
            if (row[j] > row[arg]) arg = j;
        }
        if (static_cast<int>(arg) == y_eval[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n_eval);
}

Tensor pca_project_2d(const Tensor& embeddings) {
    const std::size_t n = embeddings.dim(0), d = embeddings.dim(1);
    if (n < 2 || d < 2) throw EngineError("pca_project_2d: need at least 2 rows and 2 dims");
    std::vector<double> mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) mean[j] += embeddings[i * d + j];
    }
    for (double& m : mean) m /= static_cast<double>(n);
    std::vector<double> cov(d * d, 0.0);
    std::vector<double> dev(d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) dev[j] = embeddings[i * d + j] - mean[j];
        for (std::size_t a = 0; a < d; ++a) {
            const double da = dev[a];
            if (da == 0.0) continue;
            double* row = cov.data() + a * d;
            for (std::size_t b = 0; b < d; ++b) row[b] += da * dev[b];
        }
    }
    for (double& c : cov) c /= static_cast<double>(n - 1);

    auto power_iterate = [&](const std::vector<double>& mat) {
        std::vector<double> v(d, 1.0 / std::sqrt(static_cast<double>(d)));
        std::vector<double> next(d);
        for (int iter = 0; iter < 100; ++iter) {
            for (std::size_t a = 0; a < d; ++a) {
                double acc = 0.0;
                const double* row = mat.data() + a * d;
                for (std::size_t b = 0; b < d; ++b) acc += row[b] * v[b];
                next[a] = acc;
            }
            double norm = 0.0;
            for (double x : next) norm += x * x;
            norm = std::sqrt(norm);
            if (norm < 1e-30) break;
            for (std::size_t a = 0; a < d; ++a) v[a] = next[a] / norm;
        }
        return v;
    };

    const std::vector<double> v1 = power_iterate(cov);
    double lambda1 = 0.0;
    for (std::size_t a = 0; a < d; ++a) {
        double acc = 0.0;
        for (std::size_t b = 0; b < d; ++b) acc += cov[a * d + b] * v1[b];
        lambda1 += v1[a] * acc;
    }
    std::vector<double> deflated = cov;
    for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t b = 0; b < d; ++b) deflated[a * d + b] -= lambda1 * v1[a] * v1[b];
    }
    const std::vector<double> v2 = power_iterate(deflated);

    Tensor out({n, 2});
    for (std::size_t i = 0; i < n; ++i) {
        double p1 = 0.0, p2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double x = embeddings[i * d + j] - mean[j];
            p1 += x * v1[j];
            p2 += x * v2[j];
        }
        out[i * 2] = static_cast<float>(p1);
        out[i * 2 + 1] = static_cast<float>(p2);
    }
    return out;
}

}  // namespace qlife::dann
