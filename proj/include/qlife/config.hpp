#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace qlife::cli {

// Every knob exposed by the toolkit, with defaults matching the method's
// published constants (scl_weight 0.1, N 20, percentile 95, alpha 0.05,
// two-stage schedule 15 @ 1e-3 / 15 @ 5e-5, target class weight 0.5).
// Loadable from a `key = value` config file; command-line flags win.
struct RunConfig {
    // run
    std::uint64_t seed = 0;
    std::string out;
    std::string data;
    std::string checkpoint;
    std::string novelty_model;
    std::string batch_file;
    std::string new_class = "minor-damaged";  // rotation scenario: class held out as new
    std::string detect_class;                 // class to draw a detect batch from ("" = new_class)

    // synthetic data
    int image_size = 64;
    std::vector<int> source_counts = {975, 294, 364};
    std::vector<int> target_counts = {179, 21, 11};
    double train_frac = 0.7, val_frac = 0.0, test_frac = 0.3;

    // backbone
    std::vector<int> conv_channels = {8, 16, 32};
    std::vector<int> spp_levels = {4, 2, 1};
    int embed_dim = 512;
    double dropout = 0.5;
    double scl_weight = 0.1;

    // training
    int epochs = 30;
    int batch_size = 32;
    double learning_rate = 1e-3;
    double momentum = 0.9;
    std::string optimizer = "sgd";

    // augmentation
    double aug_crop_lo = 0.6, aug_crop_hi = 1.0;
    bool aug_flip = true;
    double aug_brightness = 0.1, aug_contrast = 0.1;

    // hypothesis testing
    int batch_n = 20;
    double percentile = 95.0;
    double alpha = 0.05;
    int null_trials = 500;
    std::string null_sampling = "mixed";  // or "per-class"

    // incremental
    int shots = 20;
    int head_epochs = 15;
    double head_lr = 1e-3;
    int e2e_epochs = 15;
    double e2e_lr = 5e-5;
    bool rehearsal_total_known = false;  // alternative reading: K across both knowns
    bool baseline_full_old = true;       // comparison baseline sees the full old-class data
    std::string sweep;                   // e.g. "5,10,15,20"; empty disables
    int sweep_seeds = 3;
    bool compare_baseline = false;

    // domain adaptation
    double grl_lambda = 1.0;
    bool lambda_ramp = false;
    double target_weight = 0.5;
    int dann_epochs = 40;
    bool target_in_domain_loss = true;
    bool baselines = false;

    // eval
    std::string eval_domain = "all";  // source | target | all
    std::string eval_split = "test";  // train | val | test | all

    // Applies one `key = value` assignment; unknown keys and malformed
    // values raise ConfigError.
    void set(const std::string& key, const std::string& value);

    // Parses a key-value config file ('#' comments, blank lines allowed).
    void load_file(const std::string& path);

    void apply_overrides(const std::vector<std::pair<std::string, std::string>>& overrides);

    void validate() const;

    nlohmann::json to_json() const;
};

}  // namespace qlife::cli
