#include "qlife/config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <sstream>

#include "qlife/errors.hpp"

using nlohmann::json;

namespace qlife::cli {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const std::uint64_t out = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (...) {
        throw ConfigError("config key '" + key + "' expects an unsigned integer, got '" + v + "'");
    }
}

int parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const int out = std::stoi(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (...) {
        throw ConfigError("config key '" + key + "' expects an integer, got '" + v + "'");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (...) {
        throw ConfigError("config key '" + key + "' expects a number, got '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + key + "' expects a boolean, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(parse_int(key, trim(cell)));
    if (out.empty()) throw ConfigError("config key '" + key + "' expects a comma list of integers");
    return out;
}

struct Entry {
    const char* name;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<json(const RunConfig&)> get;
};

#define QLIFE_STR_KEY(field) \
    {#field, [](RunConfig& c, const std::string& v) { c.field = v; }, \
     [](const RunConfig& c) { return json(c.field); }}
#define QLIFE_U64_KEY(field) \
    {#field, [](RunConfig& c, const std::string& v) { c.field = parse_u64(#field, v); }, \
     [](const RunConfig& c) { return json(c.field); }}
#define QLIFE_INT_KEY(field) \
    {#field, [](RunConfig& c, const std::string& v) { c.field = parse_int(#field, v); }, \
     [](const RunConfig& c) { return json(c.field); }}
#define QLIFE_DBL_KEY(field) \
    {#field, [](RunConfig& c, const std::string& v) { c.field = parse_double(#field, v); }, \
     [](const RunConfig& c) { return json(c.field); }}
#define QLIFE_BOOL_KEY(field) \
    {#field, [](RunConfig& c, const std::string& v) { c.field = parse_bool(#field, v); }, \
     [](const RunConfig& c) { return json(c.field); }}
#define QLIFE_ILIST_KEY(field) \
    {#field, [](RunConfig& c, const std::string& v) { c.field = parse_int_list(#field, v); }, \
     [](const RunConfig& c) { return json(c.field); }}

const std::vector<Entry>& registry() {
    static const std::vector<Entry> entries = {
        QLIFE_U64_KEY(seed),
        QLIFE_STR_KEY(out),
        QLIFE_STR_KEY(data),
        QLIFE_STR_KEY(checkpoint),
        QLIFE_STR_KEY(novelty_model),
        QLIFE_STR_KEY(batch_file),
        QLIFE_STR_KEY(new_class),
        QLIFE_STR_KEY(detect_class),
        QLIFE_INT_KEY(image_size),
        QLIFE_ILIST_KEY(source_counts),
        QLIFE_ILIST_KEY(target_counts),
        QLIFE_DBL_KEY(train_frac),
        QLIFE_DBL_KEY(val_frac),
        QLIFE_DBL_KEY(test_frac),
        QLIFE_ILIST_KEY(conv_channels),
        QLIFE_ILIST_KEY(spp_levels),
        QLIFE_INT_KEY(embed_dim),
        QLIFE_DBL_KEY(dropout),
        QLIFE_DBL_KEY(scl_weight),
        QLIFE_INT_KEY(epochs),
        QLIFE_INT_KEY(batch_size),
        QLIFE_DBL_KEY(learning_rate),
        QLIFE_DBL_KEY(momentum),
        QLIFE_STR_KEY(optimizer),
        QLIFE_DBL_KEY(aug_crop_lo),
        QLIFE_DBL_KEY(aug_crop_hi),
        QLIFE_BOOL_KEY(aug_flip),
        QLIFE_DBL_KEY(aug_brightness),
        QLIFE_DBL_KEY(aug_contrast),
        QLIFE_INT_KEY(batch_n),
        QLIFE_DBL_KEY(percentile),
        QLIFE_DBL_KEY(alpha),
        QLIFE_INT_KEY(null_trials),
        QLIFE_STR_KEY(null_sampling),
        QLIFE_INT_KEY(shots),
        QLIFE_INT_KEY(head_epochs),
        QLIFE_DBL_KEY(head_lr),
        QLIFE_INT_KEY(e2e_epochs),
        QLIFE_DBL_KEY(e2e_lr),
        QLIFE_BOOL_KEY(rehearsal_total_known),
        QLIFE_BOOL_KEY(baseline_full_old),
        QLIFE_STR_KEY(sweep),
        QLIFE_INT_KEY(sweep_seeds),
        QLIFE_BOOL_KEY(compare_baseline),
        QLIFE_DBL_KEY(grl_lambda),
        QLIFE_BOOL_KEY(lambda_ramp),
        QLIFE_DBL_KEY(target_weight),
        QLIFE_INT_KEY(dann_epochs),
        QLIFE_BOOL_KEY(target_in_domain_loss),
        QLIFE_BOOL_KEY(baselines),
        QLIFE_STR_KEY(eval_domain),
        QLIFE_STR_KEY(eval_split),
    };
    return entries;
}

#undef QLIFE_STR_KEY
#undef QLIFE_U64_KEY
#undef QLIFE_INT_KEY
#undef QLIFE_DBL_KEY
#undef QLIFE_BOOL_KEY
#undef QLIFE_ILIST_KEY

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    for (const Entry& e : registry()) {
        if (key == e.name) {
            e.set(*this, value);
            return;
        }
    }
    throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + " in " + path +
                              " is not 'key = value'");
        }
        set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
}

void RunConfig::apply_overrides(const std::vector<std::pair<std::string, std::string>>& overrides) {
    for (const auto& [key, value] : overrides) set(key, value);
}

void RunConfig::validate() const {
    if (alpha <= 0.0 || alpha >= 1.0) throw ConfigError("alpha must be in (0, 1)");
    if (percentile < 0.0 || percentile > 100.0) throw ConfigError("percentile must be in [0, 100]");
    if (batch_n < 1) throw ConfigError("batch_n must be >= 1");
    if (null_trials < 1) throw ConfigError("null_trials must be >= 1");
    if (epochs < 1 || batch_size < 1) throw ConfigError("epochs and batch_size must be >= 1");
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
    if (optimizer != "sgd" && optimizer != "adam") throw ConfigError("optimizer must be sgd or adam");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
    if (scl_weight < 0.0) throw ConfigError("scl_weight must be nonnegative");
    if (embed_dim < 1) throw ConfigError("embed_dim must be >= 1");
    if (image_size < 16) throw ConfigError("image_size must be >= 16");
    if (source_counts.size() != 3 || target_counts.size() != 3) {
        throw ConfigError("source_counts and target_counts need exactly 3 entries (good, minor, damaged)");
    }
    if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9) {
        throw ConfigError("split fractions must sum to 1");
    }
    if (shots < 1) throw ConfigError("shots must be >= 1");
    if (head_epochs < 1 || e2e_epochs < 1) throw ConfigError("stage epochs must be >= 1");
    if (head_lr <= 0.0 || e2e_lr <= 0.0) throw ConfigError("stage learning rates must be positive");
    if (grl_lambda < 0.0) throw ConfigError("grl_lambda must be nonnegative");
    if (target_weight < 0.0) throw ConfigError("target_weight must be nonnegative");
    if (dann_epochs < 1) throw ConfigError("dann_epochs must be >= 1");
    if (null_sampling != "mixed" && null_sampling != "per-class") {
        throw ConfigError("null_sampling must be mixed or per-class");
    }
    if (eval_domain != "source" && eval_domain != "target" && eval_domain != "all") {
        throw ConfigError("eval_domain must be source, target or all");
    }
    if (eval_split != "train" && eval_split != "val" && eval_split != "test" && eval_split != "all") {
        throw ConfigError("eval_split must be train, val, test or all");
    }
    if (aug_crop_lo <= 0.0 || aug_crop_lo > aug_crop_hi || aug_crop_hi > 1.0) {
        throw ConfigError("crop scales must satisfy 0 < lo <= hi <= 1");
    }
    if (sweep_seeds < 1) throw ConfigError("sweep_seeds must be >= 1");
}

json RunConfig::to_json() const {
    json out;
    for (const Entry& e : registry()) out[e.name] = e.get(*this);
    return out;
}

}  // namespace qlife::cli
