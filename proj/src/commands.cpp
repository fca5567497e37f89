#include "qlife/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <numeric>

#include <CLI11.hpp>
#include <json.hpp>

#include "qlife/checkpoint.hpp"
#include "qlife/dann.hpp"
#include "qlife/errors.hpp"
#include "qlife/image_io.hpp"
#include "qlife/incremental.hpp"
#include "qlife/novelty.hpp"
#include "qlife/report.hpp"
#include "qlife/threading.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace qlife::cli {

namespace {

model::BackboneConfig backbone_config(const RunConfig& cfg, int num_classes) {
    model::BackboneConfig b;
    b.conv_channels = cfg.conv_channels;
    b.spp_levels = cfg.spp_levels;
    b.embed_dim = cfg.embed_dim;
    b.num_classes = num_classes;
    b.scl_weight = static_cast<float>(cfg.scl_weight);
    b.dropout_rate = static_cast<float>(cfg.dropout);
    return b;
}

data::AugmentConfig augment_config(const RunConfig& cfg) {
    data::AugmentConfig a;
    a.crop_scale_lo = static_cast<float>(cfg.aug_crop_lo);
    a.crop_scale_hi = static_cast<float>(cfg.aug_crop_hi);
    a.horizontal_flip = cfg.aug_flip;
    a.brightness_jitter = static_cast<float>(cfg.aug_brightness);
    a.contrast_jitter = static_cast<float>(cfg.aug_contrast);
    return a;
}

model::TrainConfig train_config(const RunConfig& cfg) {
    model::TrainConfig t;
    t.epochs = cfg.epochs;
    t.batch_size = cfg.batch_size;
    t.learning_rate = static_cast<float>(cfg.learning_rate);
    t.momentum = static_cast<float>(cfg.momentum);
    t.optimizer = cfg.optimizer;
    t.seed = cfg.seed;
    t.augment = augment_config(cfg);
    return t;
}

novelty::HypothesisConfig hypothesis_config(const RunConfig& cfg) {
    novelty::HypothesisConfig h;
    h.batch_size = cfg.batch_n;
    h.percentile = cfg.percentile;
    h.alpha = cfg.alpha;
    h.num_null_trials = cfg.null_trials;
    h.sampling = cfg.null_sampling == "per-class"
                     ? novelty::HypothesisConfig::NullSampling::per_class
                     : novelty::HypothesisConfig::NullSampling::mixed;
    return h;
}

struct LoadedData {
    data::Dataset ds;
    data::DataSplit split;
};

LoadedData load_data(const RunConfig& cfg) {
    if (cfg.data.empty()) throw ConfigError("this command needs --data");
    LoadedData out;
    out.ds = data::ingest(cfg.data);
    const fs::path manifest = fs::path(cfg.data) / "manifest.json";
    if (fs::exists(manifest)) {
        out.split = data::read_manifest_split(manifest.string(), out.ds);
    } else {
        out.split.train.resize(out.ds.size());
        std::iota(out.split.train.begin(), out.split.train.end(), 0);
    }
    return out;
}

data::Dataset take(const data::Dataset& ds, const std::vector<int>& indices, int domain_id,
                   const std::vector<std::string>& classes) {
    data::Dataset part = data::subset(ds, indices);
    if (domain_id >= 0) part = data::filter_domain(part, domain_id);
    return data::filter_classes(part, classes);
}

std::vector<std::string> known_classes(const RunConfig& cfg) {
    std::vector<std::string> out;
    for (const auto& name : data::kClassNames) {
        if (name != cfg.new_class) out.push_back(name);
    }
    if (out.size() != 2) {
        throw ConfigError("new_class '" + cfg.new_class + "' is not one of the three classes");
    }
    return out;
}

json base_report(const RunConfig& cfg, const std::string& command) {
    json r;
    r["command"] = command;
    r["config"] = cfg.to_json();
    return r;
}

// Few-shot draw: K samples per class from a pool, without replacement.
data::Dataset draw_shots(const data::Dataset& pool, int k, std::uint64_t seed) {
    Rng rng(seed);
    data::Dataset out;
    out.class_names = pool.class_names;
    out.domain_names = pool.domain_names;
    for (std::size_t c = 0; c < pool.class_names.size(); ++c) {
        std::vector<int> idx = pool.indices_of_class(static_cast<int>(c));
        if (static_cast<int>(idx.size()) < k) {
            throw DataError("class '" + pool.class_names[c] + "' has only " +
                            std::to_string(idx.size()) + " samples, need " + std::to_string(k));
        }
        rng.shuffle(idx);
        for (int i = 0; i < k; ++i) {
            out.samples.push_back(pool.samples[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
        }
    }
    return out;
}

data::Dataset remove_ids(const data::Dataset& pool, const data::Dataset& taken) {
    std::vector<int> keep;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        bool found = false;
        for (const auto& t : taken.samples) {
            if (t.id == pool.samples[i].id) {
                found = true;
                break;
            }
        }
        if (!found) keep.push_back(static_cast<int>(i));
    }
    return data::subset(pool, keep);
}

}  // namespace

std::string resolve_out_dir(const RunConfig& cfg, const std::string& command) {
    std::string dir = cfg.out;
    if (dir.empty()) {
        const auto now = std::chrono::system_clock::now();
        const std::time_t t = std::chrono::system_clock::to_time_t(now);
        char buf[32];
        std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", std::gmtime(&t));
        dir = (fs::path("runs") / (std::string(buf) + "-" + command)).string();
    }
    fs::create_directories(dir);
    fs::create_directories(fs::path(dir) / "artifacts");
    return dir;
}

int cmd_gen_data(RunConfig cfg) {
    cfg.validate();
    const std::string out_dir = resolve_out_dir(cfg, "gen-data");

    data::SyntheticSpec spec;
    spec.image_size = cfg.image_size;
    for (int c = 0; c < 3; ++c) {
        spec.counts[0][static_cast<std::size_t>(c)] = cfg.source_counts[static_cast<std::size_t>(c)];
        spec.counts[1][static_cast<std::size_t>(c)] = cfg.target_counts[static_cast<std::size_t>(c)];
    }
    spec.seed = cfg.seed;
    data::Dataset ds = data::generate(spec);
    data::DataSplit split = data::split(ds, cfg.train_frac, cfg.val_frac, cfg.test_frac, cfg.seed + 1);

    const std::string dataset_dir = (fs::path(out_dir) / "dataset").string();
    const std::string manifest = data::write_dataset(ds, dataset_dir, &split);

    json r = base_report(cfg, "gen-data");
    r["metrics"] = {{"num_samples", ds.size()},
                    {"train", split.train.size()},
                    {"val", split.val.size()},
                    {"test", split.test.size()}};
    r["artifacts"] = {{"dataset_dir", dataset_dir}, {"manifest", manifest}};
    report::write_json_file((fs::path(out_dir) / "report.json").string(), r);
    return 0;
}

int cmd_train_baseline(RunConfig cfg) {
    cfg.validate();
    const std::string out_dir = resolve_out_dir(cfg, "train-baseline");
    LoadedData loaded = load_data(cfg);
    const std::vector<std::string> knowns = known_classes(cfg);

    data::Dataset train_ds = take(loaded.ds, loaded.split.train, 0, knowns);
    data::Dataset test_ds = take(loaded.ds, loaded.split.test, 0, knowns);
    if (train_ds.empty()) throw DataError("no source-domain training samples for the known classes");

    model::QualityModel m(backbone_config(cfg, 2), cfg.seed);
    m.label_map() = knowns;
    const model::TrainHistory history = model::train_baseline(m, train_ds, train_config(cfg));

    json r = base_report(cfg, "train-baseline");
    r["metrics"]["history"] = report::history_json(history);
    if (!test_ds.empty()) {
        const model::EvalResult eval = model::evaluate(m, test_ds, max_threads());
        r["metrics"]["test"] = report::confusion_json(eval, knowns);
    }
    const std::string ckpt = (fs::path(out_dir) / "baseline.ckpt").string();
    checkpoint::save_model(m, ckpt, {{"command", "train-baseline"}, {"seed", cfg.seed}});
    r["artifacts"]["checkpoint"] = ckpt;
    report::write_json_file((fs::path(out_dir) / "report.json").string(), r);
    return 0;
}

int cmd_calibrate(RunConfig cfg) {
    cfg.validate();
    if (cfg.checkpoint.empty()) throw ConfigError("calibrate needs --checkpoint");
    const std::string out_dir = resolve_out_dir(cfg, "calibrate");
    model::QualityModel m = checkpoint::load_model(cfg.checkpoint);
    if (m.num_classes() != 2) throw CheckpointError("calibrate expects a 2-class baseline checkpoint");
    LoadedData loaded = load_data(cfg);
    const std::vector<std::string>& knowns = m.label_map();

    data::Dataset train_known = take(loaded.ds, loaded.split.train, 0, knowns);
    data::Dataset class1 = data::filter_classes(train_known, {knowns[0]});
    data::Dataset class2 = data::filter_classes(train_known, {knowns[1]});
    if (class1.size() < 2 || class2.size() < 2) {
        throw DataError("calibrate needs at least 2 training samples per known class");
    }
    const int threads = max_threads();
    Tensor f1 = m.embed_dataset(class1, threads);
    Tensor f2 = m.embed_dataset(class2, threads);

    novelty::LdaModel lda = novelty::fit_lda(f1, f2);
    const novelty::HypothesisConfig hcfg = hypothesis_config(cfg);
    novelty::CalibratedThresholds thresholds = novelty::calibrate(lda, f1, f2, hcfg, cfg.seed);

    checkpoint::NoveltyArtifact artifact{lda, thresholds, hcfg,
                                         {knowns[0], knowns[1]}, cfg.new_class};
    const std::string artifact_path = (fs::path(out_dir) / "novelty_model.json").string();
    checkpoint::save_novelty(artifact, artifact_path);

    // Calibration curve CSV: t, misid_rate.
    std::vector<std::vector<std::string>> curve_rows;
    for (std::size_t t = 0; t < thresholds.misid_curve.size(); ++t) {
        curve_rows.push_back({std::to_string(t), report::format_double(thresholds.misid_curve[t])});
    }
    const std::string curve_csv = (fs::path(out_dir) / "artifacts" / "calibration_curve.csv").string();
    report::write_csv(curve_csv, {"t", "misid_rate"}, curve_rows);

    // Projection histogram CSV over held-out samples of every class present.
    std::vector<std::pair<std::string, std::vector<double>>> projections;
    double lo = 1e300, hi = -1e300;
    for (const auto& name : loaded.ds.class_names) {
        data::Dataset cls_test = take(loaded.ds, loaded.split.test, 0, {name});
        if (cls_test.empty()) continue;
        Tensor feats = m.embed_dataset(cls_test, threads);
        std::vector<double> proj(feats.dim(0));
        for (std::size_t i = 0; i < feats.dim(0); ++i) {
            proj[i] = lda.project(std::span<const float>(feats.data() + i * feats.dim(1), feats.dim(1)));
            lo = std::min(lo, proj[i]);
            hi = std::max(hi, proj[i]);
        }
        projections.emplace_back(name, std::move(proj));
    }
    std::vector<std::vector<std::string>> hist_rows;
    if (!projections.empty() && hi > lo) {
        const int bins = 40;
        const double pad = 0.05 * (hi - lo);
        lo -= pad;
        hi += pad;
        const double width = (hi - lo) / bins;
        for (const auto& [name, proj] : projections) {
            std::vector<int> counts(bins, 0);
            for (double p : proj) {
                int b = static_cast<int>(std::floor((p - lo) / width));
                b = std::max(0, std::min(bins - 1, b));
                ++counts[static_cast<std::size_t>(b)];
            }
            for (int b = 0; b < bins; ++b) {
                hist_rows.push_back({report::format_double(lo + (b + 0.5) * width),
                                     std::to_string(counts[static_cast<std::size_t>(b)]), name});
            }
        }
    }
    const std::string hist_csv = (fs::path(out_dir) / "artifacts" / "projection_hist.csv").string();
    report::write_csv(hist_csv, {"bin_center", "count", "class"}, hist_rows);

    json r = base_report(cfg, "calibrate");
    r["metrics"] = {{"t_sample", thresholds.t_sample},
                    {"t_vote", thresholds.t_vote},
                    {"vote_rule_satisfied", thresholds.vote_rule_satisfied},
                    {"misid_curve", thresholds.misid_curve}};
    r["artifacts"] = {{"novelty_model", artifact_path},
                      {"calibration_curve", curve_csv},
                      {"projection_hist", hist_csv}};
    report::write_json_file((fs::path(out_dir) / "report.json").string(), r);
    return 0;
}

int cmd_detect(RunConfig cfg) {
    cfg.validate();
    if (cfg.novelty_model.empty()) throw ConfigError("detect needs --novelty-model");
    const std::string out_dir = resolve_out_dir(cfg, "detect");
    checkpoint::NoveltyArtifact artifact = checkpoint::load_novelty(cfg.novelty_model);

    Tensor batch;
    if (!cfg.batch_file.empty()) {
        FeatureTable table = read_feature_csv(cfg.batch_file);
        batch = table.features;
        if (batch.dim(1) != artifact.lda.dim()) {
            throw DataError("batch feature width " + std::to_string(batch.dim(1)) +
                            " does not match the fitted model (" +
                            std::to_string(artifact.lda.dim()) + ")");
        }
    } else {
        if (cfg.checkpoint.empty()) {
            throw ConfigError("detect needs --batch (feature csv) or --checkpoint with --data");
        }
        model::QualityModel m = checkpoint::load_model(cfg.checkpoint);
        LoadedData loaded = load_data(cfg);
        const std::string cls = cfg.detect_class.empty() ? cfg.new_class : cfg.detect_class;
        data::Dataset pool = take(loaded.ds, loaded.split.test, 0, {cls});
        if (pool.empty()) throw DataError("no test samples of class '" + cls + "' to draw a batch");
        Rng rng(cfg.seed);
        data::Dataset drawn;
        drawn.class_names = pool.class_names;
        drawn.domain_names = pool.domain_names;
        for (int i = 0; i < artifact.config.batch_size; ++i) {
            drawn.samples.push_back(pool.samples[static_cast<std::size_t>(rng.below(pool.size()))]);
        }
        batch = m.embed_dataset(drawn, max_threads());
    }

    const novelty::BatchDecision decision =
        novelty::test_batch(artifact.lda, artifact.thresholds, artifact.config, batch);

    json r = base_report(cfg, "detect");
    r["metrics"] = {{"votes", decision.votes},
                    {"verdict", decision.is_new_class ? "new-class" : "known"},
                    {"scores", decision.scores},
                    {"t_sample", artifact.thresholds.t_sample},
                    {"t_vote", artifact.thresholds.t_vote}};
    report::write_json_file((fs::path(out_dir) / "report.json").string(), r);
    return 0;
}

namespace {

struct IncrementalPools {
    data::Dataset new_pool;    // 3-class label space, new class only
    data::Dataset known_pool;  // 3-class label space, known classes only
    data::Dataset test3;       // 3-class source test set
    std::vector<std::string> labels3;
};

IncrementalPools incremental_pools(const LoadedData& loaded, const model::QualityModel& base,
                                   const std::string& new_class) {
    IncrementalPools p;
    p.labels3 = base.label_map();
    for (const auto& name : p.labels3) {
        if (name == new_class) {
            throw ConfigError("new_class '" + new_class + "' is already in the model's label map");
        }
    }
    p.labels3.push_back(new_class);
    data::Dataset train3 = take(loaded.ds, loaded.split.train, 0, p.labels3);
    const int new_id = static_cast<int>(p.labels3.size()) - 1;
    p.new_pool = data::subset(train3, train3.indices_of_class(new_id));
    std::vector<int> known_idx;
    for (std::size_t i = 0; i < train3.size(); ++i) {
        if (train3.samples[i].class_id != new_id) known_idx.push_back(static_cast<int>(i));
    }
    p.known_pool = data::subset(train3, known_idx);
    p.test3 = take(loaded.ds, loaded.split.test, 0, p.labels3);
    return p;
}

}  // namespace

int cmd_incremental(RunConfig cfg) {
    cfg.validate();
    if (cfg.checkpoint.empty()) throw ConfigError("incremental needs --checkpoint");
    const std::string out_dir = resolve_out_dir(cfg, "incremental");
    model::QualityModel base = checkpoint::load_model(cfg.checkpoint);
    if (base.num_classes() != 2) throw CheckpointError("incremental expects a 2-class baseline checkpoint");
    LoadedData loaded = load_data(cfg);
    IncrementalPools pools = incremental_pools(loaded, base, cfg.new_class);

    incremental::StageSchedule schedule;
    schedule.head_epochs = cfg.head_epochs;
    schedule.head_lr = static_cast<float>(cfg.head_lr);
    schedule.e2e_epochs = cfg.e2e_epochs;
    schedule.e2e_lr = static_cast<float>(cfg.e2e_lr);

    const int threads = max_threads();
    json r = base_report(cfg, "incremental");

    auto run_two_stage = [&](int k, std::uint64_t seed, incremental::TwoStageHistory* hist_out) {
        data::Dataset rehearsal = incremental::build_rehearsal_set(
            pools.new_pool, pools.known_pool, k, seed, cfg.rehearsal_total_known);
        model::QualityModel m3 = incremental::expand_head(base, cfg.new_class, seed + 17);
        model::TrainConfig tcfg = train_config(cfg);
        tcfg.seed = seed;
        tcfg.batch_size = std::min<int>(16, static_cast<int>(rehearsal.size()));
        incremental::TwoStageHistory hist =
            incremental::finetune_two_stage(m3, rehearsal, schedule, tcfg);
        if (hist_out) *hist_out = std::move(hist);
        return m3;
    };

    incremental::TwoStageHistory history;
    model::QualityModel m3 = run_two_stage(cfg.shots, cfg.seed, &history);
    const model::EvalResult eval3 = model::evaluate(m3, pools.test3, threads);
    r["metrics"]["test"] = report::confusion_json(eval3, pools.labels3);
    r["metrics"]["head_stage"] = report::history_json(history.head_stage);
    r["metrics"]["e2e_stage"] = report::history_json(history.e2e_stage);

    // Old-class retention: recall of the original classes before vs after.
    {
        data::Dataset old_test = take(loaded.ds, loaded.split.test, 0, base.label_map());
        if (!old_test.empty()) {
            const model::EvalResult before = model::evaluate(base, old_test, threads);
            json retention = json::array();
            for (std::size_t c = 0; c < base.label_map().size(); ++c) {
                retention.push_back({{"class", base.label_map()[c]},
                                     {"recall_before", before.per_class_recall[c]},
                                     {"recall_after", eval3.per_class_recall[c]}});
            }
            r["metrics"]["old_class_retention"] = retention;
        }
    }

    // Confusion matrix artifact.
    {
        std::vector<std::vector<std::string>> rows;
        for (std::size_t t = 0; t < eval3.confusion.size(); ++t) {
            for (std::size_t p = 0; p < eval3.confusion[t].size(); ++p) {
                rows.push_back({pools.labels3[t], pools.labels3[p],
                                std::to_string(eval3.confusion[t][p])});
            }
        }
        report::write_csv((fs::path(out_dir) / "artifacts" / "confusion.csv").string(),
                          {"true", "predicted", "count"}, rows);
    }

    // Optional shot sweep with the single-stage imbalanced baseline.
    if (!cfg.sweep.empty()) {
        std::vector<int> ks;
        {
            std::stringstream ss(cfg.sweep);
            std::string cell;
            while (std::getline(ss, cell, ',')) ks.push_back(std::stoi(cell));
        }
        std::vector<std::vector<std::string>> two_stage_rows, baseline_rows;
        for (int k : ks) {
            for (int s = 0; s < cfg.sweep_seeds; ++s) {
                const std::uint64_t seed = cfg.seed + 1000 * static_cast<std::uint64_t>(s) +
                                           static_cast<std::uint64_t>(k);
                model::QualityModel swept = run_two_stage(k, seed, nullptr);
                const double acc = model::evaluate(swept, pools.test3, threads).accuracy;
                two_stage_rows.push_back({cfg.new_class, std::to_string(k), std::to_string(s),
                                          report::format_double(acc)});
                if (cfg.compare_baseline) {
                    data::Dataset shots = incremental::build_rehearsal_set(
                        pools.new_pool, pools.known_pool, k, seed, cfg.rehearsal_total_known);
                    data::Dataset bl_train;
                    if (cfg.baseline_full_old) {
                        bl_train = pools.known_pool;
                        const int new_id = static_cast<int>(pools.labels3.size()) - 1;
                        for (const auto& sm : shots.samples) {
                            if (sm.class_id == new_id) bl_train.samples.push_back(sm);
                        }
                    } else {
                        bl_train = shots;
                    }
                    model::QualityModel fresh(backbone_config(cfg, 3), seed + 99);
                    fresh.label_map() = pools.labels3;
                    model::TrainConfig tcfg = train_config(cfg);
                    tcfg.seed = seed + 7;
                    incremental::baseline_finetune(fresh, bl_train, tcfg);
                    const double bacc = model::evaluate(fresh, pools.test3, threads).accuracy;
                    baseline_rows.push_back({cfg.new_class, std::to_string(k), std::to_string(s),
                                             report::format_double(bacc)});
                }
            }
        }
        const std::string sweep_csv = (fs::path(out_dir) / "artifacts" / "shots_two_stage.csv").string();
        report::write_csv(sweep_csv, {"scenario", "K", "seed", "accuracy"}, two_stage_rows);
        r["artifacts"]["shots_two_stage"] = sweep_csv;
        if (cfg.compare_baseline) {
            const std::string bl_csv = (fs::path(out_dir) / "artifacts" / "shots_baseline.csv").string();
            report::write_csv(bl_csv, {"scenario", "K", "seed", "accuracy"}, baseline_rows);
            r["artifacts"]["shots_baseline"] = bl_csv;
        }
    }

    const std::string ckpt = (fs::path(out_dir) / "incremental.ckpt").string();
    checkpoint::save_model(m3, ckpt, {{"command", "incremental"}, {"seed", cfg.seed},
                                      {"shots", cfg.shots}, {"new_class", cfg.new_class}});
    r["artifacts"]["checkpoint"] = ckpt;
    report::write_json_file((fs::path(out_dir) / "report.json").string(), r);
    return 0;
}

namespace {

struct DomainEval {
    double source = 0.0;
    double target = 0.0;
};

DomainEval eval_both_domains(const model::QualityModel& m, const data::Dataset& ds,
                             const data::DataSplit& split, int threads) {
    DomainEval out;
    data::Dataset test = data::subset(ds, split.test);
    data::Dataset src = data::filter_classes(data::filter_domain(test, 0), m.label_map());
    data::Dataset tgt = data::filter_classes(data::filter_domain(test, 1), m.label_map());
    if (!src.empty()) out.source = model::evaluate(m, src, threads).accuracy;
    if (!tgt.empty()) out.target = model::evaluate(m, tgt, threads).accuracy;
    return out;
}

}  // namespace

int cmd_adapt(RunConfig cfg) {
    cfg.validate();
    const std::string out_dir = resolve_out_dir(cfg, "adapt");
    LoadedData loaded = load_data(cfg);
    const std::vector<std::string> labels3(data::kClassNames);
    const int threads = max_threads();

    data::Dataset source_train = take(loaded.ds, loaded.split.train, 0, labels3);
    data::Dataset target_train = take(loaded.ds, loaded.split.train, 1, labels3);
    if (source_train.empty() || target_train.empty()) {
        throw DataError("adapt needs training samples in both domains");
    }
    data::Dataset few_shot = draw_shots(target_train, cfg.shots, cfg.seed + 3);
    data::Dataset unlabeled = remove_ids(target_train, few_shot);

    dann::DannConfig dcfg;
    dcfg.grl_lambda = static_cast<float>(cfg.grl_lambda);
    dcfg.lambda_ramp = cfg.lambda_ramp;
    dcfg.target_class_weight = static_cast<float>(cfg.target_weight);
    dcfg.labeled_target_in_domain_loss = cfg.target_in_domain_loss;
    dcfg.epochs = cfg.dann_epochs;
    dcfg.batch_size = cfg.batch_size;
    dcfg.learning_rate = static_cast<float>(cfg.learning_rate);
    dcfg.momentum = static_cast<float>(cfg.momentum);
    dcfg.optimizer = cfg.optimizer;
    dcfg.seed = cfg.seed;
    dcfg.augment = augment_config(cfg);

    dann::DannModel dm(backbone_config(cfg, 3), cfg.seed);
    dm.base().label_map() = labels3;
    const dann::AdaptHistory history = dann::adapt(dm, source_train, few_shot, unlabeled, dcfg);
    const DomainEval accs = eval_both_domains(dm.base(), loaded.ds, loaded.split, threads);

    json r = base_report(cfg, "adapt");
    r["metrics"]["source_accuracy"] = accs.source;
    r["metrics"]["target_accuracy"] = accs.target;
    {
        json epochs = json::array();
        for (const auto& e : history.epochs) {
            epochs.push_back({{"cls_source", e.cls_source},
                              {"cls_target", e.cls_target},
                              {"domain", e.domain},
                              {"total", e.total}});
        }
        r["metrics"]["history"] = std::move(epochs);
    }

    // 2-D PCA projection of test embeddings for plotting.
    {
        data::Dataset test = data::filter_classes(data::subset(loaded.ds, loaded.split.test), labels3);
        if (test.size() >= 4) {
            Tensor z = dm.base().embed_dataset(test, threads);
            Tensor xy = dann::pca_project_2d(z);
            std::vector<std::vector<std::string>> rows;
            for (std::size_t i = 0; i < test.size(); ++i) {
                rows.push_back({report::format_double(xy[i * 2]),
                                report::format_double(xy[i * 2 + 1]),
                                test.domain_names[static_cast<std::size_t>(test.samples[i].domain_id)],
                                test.class_names[static_cast<std::size_t>(test.samples[i].class_id)]});
            }
            const std::string pca_csv = (fs::path(out_dir) / "artifacts" / "embedding_pca.csv").string();
            report::write_csv(pca_csv, {"x", "y", "domain", "class"}, rows);
            r["artifacts"]["embedding_pca"] = pca_csv;
        }
    }

    // Optional comparison grid: transfer, zero-shot and target-only
    // baselines over sweep_seeds seeds, reported as mean +- std.
    if (cfg.baselines) {
        struct Cell {
            std::vector<double> src, tgt;
        };
        std::map<std::string, Cell> table;
        for (int s = 0; s < cfg.sweep_seeds; ++s) {
            const std::uint64_t seed = cfg.seed + 31 * static_cast<std::uint64_t>(s) + 1;
            model::TrainConfig tcfg = train_config(cfg);
            tcfg.seed = seed;

            model::QualityModel source_only(backbone_config(cfg, 3), seed);
            source_only.label_map() = labels3;
            model::train_classifier(source_only, source_train, tcfg);
            const DomainEval b2 = eval_both_domains(source_only, loaded.ds, loaded.split, threads);
            table["baseline2-zero-shot"].src.push_back(b2.source);
            table["baseline2-zero-shot"].tgt.push_back(b2.target);

            model::QualityModel transfer = source_only;
            model::TrainConfig ft = tcfg;
            ft.seed = seed + 11;
            ft.batch_size = std::min<int>(16, static_cast<int>(few_shot.size()));
            model::train_classifier(transfer, few_shot, ft);
            const DomainEval b1 = eval_both_domains(transfer, loaded.ds, loaded.split, threads);
            table["baseline1-transfer"].src.push_back(b1.source);
            table["baseline1-transfer"].tgt.push_back(b1.target);

            model::QualityModel target_only(backbone_config(cfg, 3), seed + 23);
            target_only.label_map() = labels3;
            model::TrainConfig to = ft;
            to.seed = seed + 29;
            model::train_classifier(target_only, few_shot, to);
            const DomainEval b3 = eval_both_domains(target_only, loaded.ds, loaded.split, threads);
            table["baseline3-target-only"].src.push_back(b3.source);
            table["baseline3-target-only"].tgt.push_back(b3.target);

            dann::DannConfig dc = dcfg;
            dc.seed = seed + 41;
            dann::DannModel ours(backbone_config(cfg, 3), seed + 43);
            ours.base().label_map() = labels3;
            data::Dataset shots_s = draw_shots(target_train, cfg.shots, seed + 47);
            dann::adapt(ours, source_train, shots_s, remove_ids(target_train, shots_s), dc);
            const DomainEval od = eval_both_domains(ours.base(), loaded.ds, loaded.split, threads);
            table["ours-dann"].src.push_back(od.source);
            table["ours-dann"].tgt.push_back(od.target);
        }
        auto mean_std = [](const std::vector<double>& v) {
            const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
            double var = 0.0;
            for (double x : v) var += (x - mean) * (x - mean);
            var = v.size() > 1 ? var / static_cast<double>(v.size() - 1) : 0.0;
            return std::pair<double, double>(mean, std::sqrt(var));
        };
        std::vector<std::vector<std::string>> rows;
        for (const auto& [method, cell] : table) {
            const auto [sm, ss] = mean_std(cell.src);
            const auto [tm, ts] = mean_std(cell.tgt);
            rows.push_back({std::to_string(cfg.shots), "source", method,
                            report::format_double(sm), report::format_double(ss)});
            rows.push_back({std::to_string(cfg.shots), "target", method,
                            report::format_double(tm), report::format_double(ts)});
        }
        const std::string cmp_csv = (fs::path(out_dir) / "artifacts" / "comparison.csv").string();
        report::write_csv(cmp_csv, {"shots", "domain", "method", "mean", "std"}, rows);
        r["artifacts"]["comparison"] = cmp_csv;
    }

    const std::string ckpt = (fs::path(out_dir) / "adapted.ckpt").string();
    checkpoint::save_dann(dm, ckpt, {{"command", "adapt"}, {"seed", cfg.seed}, {"shots", cfg.shots}});
    r["artifacts"]["checkpoint"] = ckpt;
    report::write_json_file((fs::path(out_dir) / "report.json").string(), r);
    return 0;
}

int cmd_eval(RunConfig cfg) {
    cfg.validate();
    if (cfg.checkpoint.empty()) throw ConfigError("eval needs --checkpoint");
    const std::string out_dir = resolve_out_dir(cfg, "eval");

    model::QualityModel m;
    if (checkpoint::peek_kind(cfg.checkpoint) == "dann-model") {
        m = checkpoint::load_dann(cfg.checkpoint).base();
    } else {
        m = checkpoint::load_model(cfg.checkpoint);
    }
    LoadedData loaded = load_data(cfg);

    std::vector<int> indices;
    if (cfg.eval_split == "train" || cfg.eval_split == "all") {
        indices.insert(indices.end(), loaded.split.train.begin(), loaded.split.train.end());
    }
    if (cfg.eval_split == "val" || cfg.eval_split == "all") {
        indices.insert(indices.end(), loaded.split.val.begin(), loaded.split.val.end());
    }
    if (cfg.eval_split == "test" || cfg.eval_split == "all") {
        indices.insert(indices.end(), loaded.split.test.begin(), loaded.split.test.end());
    }
    data::Dataset selected = data::subset(loaded.ds, indices);
    if (cfg.eval_domain != "all") {
        selected = data::filter_domain(selected, selected.domain_id_of(cfg.eval_domain));
    }
    selected = data::filter_classes(selected, m.label_map());
    if (selected.empty()) throw DataError("eval selection is empty");

    const model::EvalResult result = model::evaluate(m, selected, max_threads());
    json r = base_report(cfg, "eval");
    r["metrics"] = report::confusion_json(result, m.label_map());
    {
        std::vector<std::vector<std::string>> rows;
        for (std::size_t t = 0; t < result.confusion.size(); ++t) {
            for (std::size_t p = 0; p < result.confusion[t].size(); ++p) {
                rows.push_back({m.label_map()[t], m.label_map()[p],
                                std::to_string(result.confusion[t][p])});
            }
        }
        report::write_csv((fs::path(out_dir) / "artifacts" / "confusion.csv").string(),
                          {"true", "predicted", "count"}, rows);
    }
    report::write_json_file((fs::path(out_dir) / "report.json").string(), r);
    return 0;
}

namespace {

struct FlagCapture {
    std::string config_path;
    std::vector<std::pair<std::string, std::string>> overrides;
};

void add_common_options(CLI::App* sub, FlagCapture& cap) {
    sub->add_option("--config", cap.config_path, "config file with 'key = value' lines");
    auto passthrough = [sub, &cap](const std::string& flag, const char* key, const char* desc) {
        sub->add_option_function<std::string>(
            flag, [&cap, key](const std::string& v) { cap.overrides.emplace_back(key, v); }, desc);
    };
    passthrough("--seed", "seed", "PRNG seed");
    passthrough("--out", "out", "output directory (default runs/<timestamp>-<command>)");
    passthrough("--data", "data", "dataset directory or feature csv");
    passthrough("--checkpoint", "checkpoint", "model checkpoint path");
    passthrough("--novelty-model", "novelty_model", "novelty model json path");
    passthrough("--batch", "batch_file", "feature csv holding one batch");
    passthrough("--shots", "shots", "few-shot count K");
    passthrough("--alpha", "alpha", "significance level");
    passthrough("--new-class", "new_class", "class held out as new");
    passthrough("--scenario", "new_class", "rotation scenario (alias of --new-class)");
    passthrough("--epochs", "epochs", "training epochs");
    passthrough("--image-size", "image_size", "synthetic image side");
    sub->add_option_function<std::vector<std::string>>(
        "--set",
        [&cap](const std::vector<std::string>& kvs) {
            for (const auto& kv : kvs) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos) {
                    throw CLI::ValidationError("--set expects key=value, got '" + kv + "'");
                }
                cap.overrides.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
            }
        },
        "extra config overrides as key=value");
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"quality-model lifecycle toolkit: synthetic data, baseline training,\n"
                 "new-class detection, few-shot incremental updates and domain adaptation"};
    app.require_subcommand(1);

    struct Command {
        const char* name;
        const char* desc;
        int (*fn)(RunConfig);
    };
    const std::vector<Command> commands = {
        {"gen-data", "generate the synthetic two-domain dataset", cmd_gen_data},
        {"train-baseline", "train the 2-class baseline on the known classes", cmd_train_baseline},
        {"calibrate", "fit the 1-D discriminant and calibrate detection thresholds", cmd_calibrate},
        {"detect", "test one batch for new-class membership", cmd_detect},
        {"incremental", "integrate a new class with two-stage rehearsal fine-tuning", cmd_incremental},
        {"adapt", "few-shot adversarial adaptation to the target domain", cmd_adapt},
        {"eval", "evaluate a checkpoint on a dataset selection", cmd_eval},
    };

    std::vector<FlagCapture> captures(commands.size());
    std::vector<CLI::App*> subs;
    for (std::size_t i = 0; i < commands.size(); ++i) {
        CLI::App* sub = app.add_subcommand(commands[i].name, commands[i].desc);
        add_common_options(sub, captures[i]);
        subs.push_back(sub);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    for (std::size_t i = 0; i < commands.size(); ++i) {
        if (!subs[i]->parsed()) continue;
        try {
            RunConfig cfg;
            if (!captures[i].config_path.empty()) cfg.load_file(captures[i].config_path);
            cfg.apply_overrides(captures[i].overrides);
            return commands[i].fn(std::move(cfg));
        } catch (const std::exception& e) {
            const char* type = "error";
            int code = 1;
            if (dynamic_cast<const ConfigError*>(&e)) {
                type = "config";
                code = 2;
            } else if (dynamic_cast<const DataError*>(&e)) {
                type = "data";
                code = 3;
            } else if (dynamic_cast<const CheckpointError*>(&e)) {
                type = "checkpoint";
                code = 4;
            } else if (dynamic_cast<const EngineError*>(&e)) {
                type = "engine";
                code = 5;
            }
            std::cerr << json{{"error", {{"type", type}, {"message", e.what()}}}}.dump() << "\n";
            return code;
        }
    }
    return 1;
}

}  // namespace qlife::cli
