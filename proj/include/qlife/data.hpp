#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "qlife/rng.hpp"
#include "qlife/tensor.hpp"

namespace qlife::data {

// Fixed label vocabularies; directory and CSV labels must use these names.
inline const std::vector<std::string> kClassNames = {"good", "minor-damaged", "damaged"};
inline const std::vector<std::string> kDomainNames = {"source", "target"};

struct LabeledSample {
    Tensor image;     // [1, h, w] in [0, 1]; empty for precomputed samples
    Tensor features;  // [d]; set only for precomputed samples
    int class_id = 0;
    int domain_id = 0;
    std::string id;

    bool precomputed() const { return !features.empty(); }
};

struct Dataset {
    std::vector<LabeledSample> samples;
    std::vector<std::string> class_names = kClassNames;
    std::vector<std::string> domain_names = kDomainNames;

    std::size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }
    const std::string& class_name(int id) const { return class_names.at(id); }

    std::vector<int> indices_of_class(int class_id) const;
    std::vector<int> indices_of_domain(int domain_id) const;
    int class_id_of(const std::string& name) const;  // -1 if unknown
    int domain_id_of(const std::string& name) const;
};

// Sub-dataset from indices; labels keep their ids.
Dataset subset(const Dataset& ds, const std::vector<int>& indices);

// Keeps only the named classes and renumbers labels to the order given, so
// the result matches a model whose label map is exactly `keep`.
Dataset filter_classes(const Dataset& ds, const std::vector<std::string>& keep);

Dataset filter_domain(const Dataset& ds, int domain_id);

// ------------------------------------------------------------- generation

struct SyntheticSpec {
    int image_size = 64;
    // counts[domain][class]: number of images per (domain, class) cell.
    std::array<std::array<int, 3>, 2> counts = {{{975, 294, 364}, {179, 21, 11}}};
    // Defect coverage, as a fraction of the part's area, drawn per image.
    float minor_defect_lo = 0.07f, minor_defect_hi = 0.11f;
    float damaged_defect_lo = 0.28f, damaged_defect_hi = 0.50f;
    bool target_line_artifact = true;  // horizontal stripe pattern, target only
    std::uint64_t seed = 0;
};

// Deterministic per seed. Source parts are discs, target parts are squares;
// defects are bright saturated blotches with severity-scaled coverage, and
// damaged parts additionally get eroded edges. Target images carry a bright
// horizontal line artifact over the whole frame.
Dataset generate(const SyntheticSpec& spec);

// ------------------------------------------------------------- ingestion

// Reads either a directory tree root/<domain>/<class>/*.png or a feature
// table CSV (path ending in .csv). Unknown class or domain names are
// rejected with per-file diagnostics.
Dataset ingest(const std::string& path);

// Writes a dataset as a PNG tree plus manifest.json under `root`. Returns
// the manifest path. Splits, when provided, are recorded per sample.
struct DataSplit;
std::string write_dataset(const Dataset& ds, const std::string& root,
                          const DataSplit* split = nullptr);

// Reads the split recorded in a manifest (all indices in train when the
// manifest carries no split info).
DataSplit read_manifest_split(const std::string& manifest_path, const Dataset& ds);

// ------------------------------------------------------------- splitting

struct DataSplit {
    std::vector<int> train, val, test;
};

// Stratified by (domain, class), disjoint, deterministic for a fixed seed.
// Fractions must sum to 1; per-stratum counts are within one sample of the
// exact proportion.
DataSplit split(const Dataset& ds, double train_frac, double val_frac, double test_frac,
                std::uint64_t seed);

// ------------------------------------------------------------- augmentation

struct AugmentConfig {
    float crop_scale_lo = 0.6f, crop_scale_hi = 1.0f;  // area fraction of the random crop
    bool horizontal_flip = true;
    float brightness_jitter = 0.1f;  // additive, +-
    float contrast_jitter = 0.1f;    // multiplicative, 1 +- this

    static AugmentConfig identity() {
        return {.crop_scale_lo = 1.0f, .crop_scale_hi = 1.0f, .horizontal_flip = false,
                .brightness_jitter = 0.0f, .contrast_jitter = 0.0f};
    }
    bool is_identity() const {
        return crop_scale_lo >= 1.0f && !horizontal_flip && brightness_jitter == 0.0f &&
               contrast_jitter == 0.0f;
    }
};

// One random view: random resized crop (bilinear), optional flip and
// brightness/contrast jitter. Output shape equals input shape.
Tensor augment_view(const Tensor& image, const AugmentConfig& cfg, Rng& rng);

// Two independently drawn views of the same sample. Errors on precomputed
// feature samples, which cannot be augmented.
std::pair<Tensor, Tensor> augment_pair(const LabeledSample& sample, const AugmentConfig& cfg,
                                       Rng& rng);

// Center zoom by `factor` (> 1 enlarges the part), used by the
// scale-robustness checks.
Tensor rescale_view(const Tensor& image, float factor);

}  // namespace qlife::data
