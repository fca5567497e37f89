#include "qlife/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "qlife/errors.hpp"
#include "qlife/image_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace qlife::data {

std::vector<int> Dataset::indices_of_class(int class_id) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].class_id == class_id) out.push_back(static_cast<int>(i));
    }
    return out;
}

std::vector<int> Dataset::indices_of_domain(int domain_id) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].domain_id == domain_id) out.push_back(static_cast<int>(i));
    }
    return out;
}

int Dataset::class_id_of(const std::string& name) const {
    for (std::size_t i = 0; i < class_names.size(); ++i) {
        if (class_names[i] == name) return static_cast<int>(i);
    }
    return -1;
}

int Dataset::domain_id_of(const std::string& name) const {
    for (std::size_t i = 0; i < domain_names.size(); ++i) {
        if (domain_names[i] == name) return static_cast<int>(i);
    }
    return -1;
}

Dataset subset(const Dataset& ds, const std::vector<int>& indices) {
    Dataset out;
    out.class_names = ds.class_names;
    out.domain_names = ds.domain_names;
    out.samples.reserve(indices.size());
    for (int i : indices) out.samples.push_back(ds.samples.at(static_cast<std::size_t>(i)));
    return out;
}

Dataset filter_classes(const Dataset& ds, const std::vector<std::string>& keep) {
    Dataset out;
    out.class_names = keep;
    out.domain_names = ds.domain_names;
    std::vector<int> remap(ds.class_names.size(), -1);
    for (std::size_t k = 0; k < keep.size(); ++k) {
        const int id = ds.class_id_of(keep[k]);
        if (id < 0) throw DataError("filter_classes: unknown class '" + keep[k] + "'");
        remap[static_cast<std::size_t>(id)] = static_cast<int>(k);
    }
    for (const auto& s : ds.samples) {
        const int mapped = remap[static_cast<std::size_t>(s.class_id)];
        if (mapped < 0) continue;
        out.samples.push_back(s);
        out.samples.back().class_id = mapped;
    }
    return out;
}

Dataset filter_domain(const Dataset& ds, int domain_id) {
    return subset(ds, ds.indices_of_domain(domain_id));
}

// ------------------------------------------------------------- generation

namespace {

struct PartGeometry {
    float cx, cy, radius;
    bool square;
    bool contains(float x, float y) const {
        const float dx = x - cx, dy = y - cy;
        return square ? (std::fabs(dx) <= radius && std::fabs(dy) <= radius)
                      : (dx * dx + dy * dy <= radius * radius);
    }
};

void paint_disc(std::vector<float>& img, std::vector<char>& part_mask, int size, float cx, float cy,
                float r, float value_lo, float value_hi, bool require_part, bool remove_from_part,
                Rng& rng, int* newly_bright) {
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - r)));
    const int x1 = std::min(size - 1, static_cast<int>(std::ceil(cx + r)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - r)));
    const int y1 = std::min(size - 1, static_cast<int>(std::ceil(cy + r)));
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const float dx = static_cast<float>(x) - cx, dy = static_cast<float>(y) - cy;
            if (dx * dx + dy * dy > r * r) continue;
            const std::size_t idx = static_cast<std::size_t>(y) * size + x;
            if (require_part && !part_mask[idx]) continue;
            const float old = img[idx];
            img[idx] = rng.uniform_f(value_lo, value_hi);
            if (remove_from_part) part_mask[idx] = 0;
            if (newly_bright && old <= 0.85f && img[idx] > 0.85f) ++(*newly_bright);
        }
    }
}

Tensor synthesize_image(const SyntheticSpec& spec, int domain, int cls, Rng& rng) {
    const int size = spec.image_size;
    std::vector<float> img(static_cast<std::size_t>(size) * size);
    std::vector<char> part_mask(img.size(), 0);

    for (float& v : img) v = 0.08f + rng.uniform_f(-0.03f, 0.03f);

    PartGeometry part;
    part.square = (domain == 1);
    part.cx = 0.5f * size + rng.uniform_f(-0.04f, 0.04f) * size;
    part.cy = 0.5f * size + rng.uniform_f(-0.04f, 0.04f) * size;
    part.radius = rng.uniform_f(0.20f, 0.34f) * static_cast<float>(size);

    int part_area = 0;
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            if (!part.contains(static_cast<float>(x), static_cast<float>(y))) continue;
            const std::size_t idx = static_cast<std::size_t>(y) * size + x;
            img[idx] = 0.55f + rng.uniform_f(-0.05f, 0.05f);
            part_mask[idx] = 1;
            ++part_area;
        }
    }

    // Damaged parts lose chunks of their boundary.
    if (cls == 2) {
        const int bites = 3 + static_cast<int>(rng.below(3));
        for (int b = 0; b < bites; ++b) {
            const float theta = rng.uniform_f(0.0f, 6.2831853f);
            const float bx = part.cx + part.radius * std::cos(theta);
            const float by = part.cy + part.radius * std::sin(theta);
            const float br = rng.uniform_f(0.20f, 0.45f) * part.radius;
            paint_disc(img, part_mask, size, bx, by, br, 0.05f, 0.11f, /*require_part=*/true,
                       /*remove_from_part=*/true, rng, nullptr);
        }
    }

    // Bright saturated blotches with severity-scaled coverage. The two
    // severities also differ in footprint: minor damage is a scatter of
    // small dots, heavy damage a few large blobs (plus the eroded edge).
    float frac = 0.0f;
    float blotch_lo = 0.0f, blotch_hi = 0.0f;
    if (cls == 1) {
        frac = rng.uniform_f(spec.minor_defect_lo, spec.minor_defect_hi);
        blotch_lo = 0.10f;
        blotch_hi = 0.16f;
    }
    if (cls == 2) {
        frac = rng.uniform_f(spec.damaged_defect_lo, spec.damaged_defect_hi);
        blotch_lo = 0.28f;
        blotch_hi = 0.50f;
    }
    if (frac > 0.0f) {
        const int want = static_cast<int>(frac * static_cast<float>(part_area));
        if (want > part_area) {
            throw DataError("synthetic spec requests defect area larger than the part");
        }
        int covered = 0;
        int guard = 0;
        while (covered < want && guard++ < 400) {
            // Blotch center drawn inside the part footprint.
            float bx, by;
            int tries = 0;
            do {
                if (part.square) {
                    bx = part.cx + rng.uniform_f(-part.radius, part.radius);
                    by = part.cy + rng.uniform_f(-part.radius, part.radius);
                } else {
                    const float rr = part.radius * std::sqrt(rng.uniform_f(0.0f, 1.0f));
                    const float th = rng.uniform_f(0.0f, 6.2831853f);
                    bx = part.cx + rr * std::cos(th);
                    by = part.cy + rr * std::sin(th);
                }
            } while (++tries < 32 &&
                     !part.contains(bx, by));
            const float br = std::max(1.0f, rng.uniform_f(blotch_lo, blotch_hi) * part.radius);
            int added = 0;
            paint_disc(img, part_mask, size, bx, by, br, 0.94f, 1.0f, /*require_part=*/true,
                       /*remove_from_part=*/false, rng, &added);
            covered += added;
        }
    }

    // Domain artifact: bright horizontal lines across the whole frame.
    if (domain == 1 && spec.target_line_artifact) {
        const int period = 6, thickness = 2;
        const int phase = static_cast<int>(rng.below(period));
        for (int y = 0; y < size; ++y) {
            if ((y + phase) % period >= thickness) continue;
            for (int x = 0; x < size; ++x) {
                const std::size_t idx = static_cast<std::size_t>(y) * size + x;
                img[idx] = std::min(1.0f, img[idx] + 0.42f);
            }
        }
    }

    // Quantize to the 8-bit grid so a PNG round trip is exact.
    for (float& v : img) {
        v = std::min(1.0f, std::max(0.0f, v));
        v = std::round(v * 255.0f) / 255.0f;
    }
    return Tensor({1, static_cast<std::size_t>(size), static_cast<std::size_t>(size)},
                  std::move(img));
}

}  // namespace

Dataset generate(const SyntheticSpec& spec) {
    if (spec.image_size < 16) throw DataError("synthetic image size must be >= 16");
    for (const auto& row : spec.counts) {
        for (int c : row) {
            if (c < 0) throw DataError("synthetic counts must be >= 0");
        }
    }
    Dataset ds;
    Rng rng(spec.seed);
    for (int domain = 0; domain < 2; ++domain) {
        for (int cls = 0; cls < 3; ++cls) {
            const int count = spec.counts[static_cast<std::size_t>(domain)][static_cast<std::size_t>(cls)];
            for (int i = 0; i < count; ++i) {
                LabeledSample s;
                s.class_id = cls;
                s.domain_id = domain;
                std::ostringstream id;
                id << kDomainNames[static_cast<std::size_t>(domain)] << "-"
                   << kClassNames[static_cast<std::size_t>(cls)] << "-" << std::setw(4)
                   << std::setfill('0') << i;
                s.id = id.str();
                s.image = synthesize_image(spec, domain, cls, rng);
                ds.samples.push_back(std::move(s));
            }
        }
    }
    return ds;
}

// ------------------------------------------------------------- ingestion

namespace {

Dataset ingest_feature_csv(const std::string& path) {
    FeatureTable table = read_feature_csv(path);
    if (table.class_labels.empty() || table.domain_labels.empty()) {
        throw DataError("feature table " + path + " must carry class and domain columns");
    }
    Dataset ds;
    const std::size_t d = table.features.dim(1);
    for (std::size_t i = 0; i < table.features.dim(0); ++i) {
        LabeledSample s;
        s.class_id = ds.class_id_of(table.class_labels[i]);
        s.domain_id = ds.domain_id_of(table.domain_labels[i]);
        if (s.class_id < 0) {
            throw DataError("unknown class '" + table.class_labels[i] + "' at row " +
                            std::to_string(i + 2) + " in " + path);
        }
        if (s.domain_id < 0) {
            throw DataError("unknown domain '" + table.domain_labels[i] + "' at row " +
                            std::to_string(i + 2) + " in " + path);
        }
        s.id = "row-" + std::to_string(i);
        s.features = Tensor({d});
        for (std::size_t j = 0; j < d; ++j) s.features[j] = table.features[i * d + j];
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

}  // namespace

Dataset ingest(const std::string& path) {
    if (path.size() > 4 && path.substr(path.size() - 4) == ".csv") {
        return ingest_feature_csv(path);
    }
    if (!fs::is_directory(path)) {
        throw DataError("dataset path is neither a directory nor a .csv table: " + path);
    }
    Dataset ds;
    std::vector<fs::path> domain_dirs;
    for (const auto& entry : fs::directory_iterator(path)) {
        if (entry.is_directory()) domain_dirs.push_back(entry.path());
    }
    std::sort(domain_dirs.begin(), domain_dirs.end());
    if (domain_dirs.empty()) throw DataError("no domain directories under " + path);
    for (const auto& domain_dir : domain_dirs) {
        const std::string domain_name = domain_dir.filename().string();
        const int domain_id = ds.domain_id_of(domain_name);
        if (domain_id < 0) {
            throw DataError("unknown domain directory '" + domain_name + "' under " + path);
        }
        std::vector<fs::path> class_dirs;
        for (const auto& entry : fs::directory_iterator(domain_dir)) {
            if (entry.is_directory()) class_dirs.push_back(entry.path());
        }
        std::sort(class_dirs.begin(), class_dirs.end());
        for (const auto& class_dir : class_dirs) {
            const std::string class_name = class_dir.filename().string();
            const int class_id = ds.class_id_of(class_name);
            if (class_id < 0) {
                throw DataError("unknown class directory '" + class_dir.string() + "'");
            }
            std::vector<fs::path> files;
            for (const auto& entry : fs::directory_iterator(class_dir)) {
                if (entry.is_regular_file() && entry.path().extension() == ".png") {
                    files.push_back(entry.path());
                }
            }
            std::sort(files.begin(), files.end());
            if (files.empty()) {
                throw DataError("empty class directory: " + class_dir.string());
            }
            for (const auto& file : files) {
                LabeledSample s;
                s.class_id = class_id;
                s.domain_id = domain_id;
                s.id = file.stem().string();
                s.image = read_png_gray(file.string());
                ds.samples.push_back(std::move(s));
            }
        }
    }
    return ds;
}

std::string write_dataset(const Dataset& ds, const std::string& root, const DataSplit* split) {
    fs::create_directories(root);
    std::vector<std::string> split_of(ds.size(), "train");
    if (split) {
        for (int i : split->val) split_of.at(static_cast<std::size_t>(i)) = "val";
        for (int i : split->test) split_of.at(static_cast<std::size_t>(i)) = "test";
    }
    json manifest;
    manifest["class_names"] = ds.class_names;
    manifest["domain_names"] = ds.domain_names;
    json entries = json::array();
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const auto& s = ds.samples[i];
        if (s.precomputed()) {
            throw DataError("write_dataset: cannot write precomputed-feature samples as images");
        }
        const fs::path dir = fs::path(root) / ds.domain_names.at(static_cast<std::size_t>(s.domain_id)) /
                             ds.class_names.at(static_cast<std::size_t>(s.class_id));
        fs::create_directories(dir);
        const fs::path file = dir / (s.id + ".png");
        write_png_gray(file.string(), s.image);
        entries.push_back({{"id", s.id},
                           {"path", fs::relative(file, root).string()},
                           {"class", ds.class_names.at(static_cast<std::size_t>(s.class_id))},
                           {"domain", ds.domain_names.at(static_cast<std::size_t>(s.domain_id))},
                           {"split", split_of[i]}});
    }
    manifest["samples"] = std::move(entries);
    const fs::path manifest_path = fs::path(root) / "manifest.json";
    std::ofstream out(manifest_path);
    if (!out) throw DataError("cannot write manifest: " + manifest_path.string());
    out << manifest.dump(2) << "\n";
    return manifest_path.string();
}

DataSplit read_manifest_split(const std::string& manifest_path, const Dataset& ds) {
    std::ifstream in(manifest_path);
    if (!in) throw DataError("cannot open manifest: " + manifest_path);
    json manifest;
    try {
        in >> manifest;
    } catch (const std::exception& e) {
        throw DataError("malformed manifest " + manifest_path + ": " + e.what());
    }
    std::unordered_map<std::string, std::string> split_of;
    for (const auto& entry : manifest.at("samples")) {
        split_of[entry.at("id").get<std::string>()] =
            entry.value("split", std::string("train"));
    }
    DataSplit split;
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const auto it = split_of.find(ds.samples[i].id);
        if (it == split_of.end()) {
            throw DataError("sample '" + ds.samples[i].id + "' missing from manifest " + manifest_path);
        }
        if (it->second == "val") {
            split.val.push_back(static_cast<int>(i));
        } else if (it->second == "test") {
            split.test.push_back(static_cast<int>(i));
        } else {
            split.train.push_back(static_cast<int>(i));
        }
    }
    return split;
}

// ------------------------------------------------------------- splitting

DataSplit split(const Dataset& ds, double train_frac, double val_frac, double test_frac,
                std::uint64_t seed) {
    if (std::fabs(train_frac + val_frac + test_frac - 1.0) > 1e-9) {
        throw DataError("split fractions must sum to 1");
    }
    if (train_frac < 0 || val_frac < 0 || test_frac < 0) {
        throw DataError("split fractions must be nonnegative");
    }
    DataSplit out;
    Rng rng(seed);
    for (std::size_t domain = 0; domain < ds.domain_names.size(); ++domain) {
        for (std::size_t cls = 0; cls < ds.class_names.size(); ++cls) {
            std::vector<int> idx;
            for (std::size_t i = 0; i < ds.samples.size(); ++i) {
                if (ds.samples[i].domain_id == static_cast<int>(domain) &&
                    ds.samples[i].class_id == static_cast<int>(cls)) {
                    idx.push_back(static_cast<int>(i));
                }
            }
            if (idx.empty()) continue;
            rng.shuffle(idx);
            const double n = static_cast<double>(idx.size());
            const std::array<double, 3> frac = {train_frac, val_frac, test_frac};
            std::array<std::size_t, 3> count;
            std::array<double, 3> remainder;
            std::size_t assigned = 0;
            for (int k = 0; k < 3; ++k) {
                const double exact = frac[static_cast<std::size_t>(k)] * n;
                count[static_cast<std::size_t>(k)] = static_cast<std::size_t>(std::floor(exact));
                remainder[static_cast<std::size_t>(k)] = exact - std::floor(exact);
                assigned += count[static_cast<std::size_t>(k)];
            }
            while (assigned < idx.size()) {
                std::size_t best = 0;
                for (std::size_t k = 1; k < 3; ++k) {
                    if (remainder[k] > remainder[best]) best = k;
                }
                ++count[best];
                remainder[best] = -1.0;
                ++assigned;
            }
            for (int k = 0; k < 3; ++k) {
                if (frac[static_cast<std::size_t>(k)] > 0.0 && count[static_cast<std::size_t>(k)] == 0) {
                    throw DataError("class '" + ds.class_names[cls] + "' in domain '" +
                                    ds.domain_names[domain] +
                                    "' is too small for the requested split");
                }
            }
            std::size_t at = 0;
            for (std::size_t k = 0; k < count[0]; ++k) out.train.push_back(idx[at++]);
            for (std::size_t k = 0; k < count[1]; ++k) out.val.push_back(idx[at++]);
            for (std::size_t k = 0; k < count[2]; ++k) out.test.push_back(idx[at++]);
        }
    }
    return out;
}

// ------------------------------------------------------------- augmentation

namespace {

// Bilinear resize of a [1, h, w] tensor to [1, oh, ow] with the half-pixel
// center convention. Same-size calls copy exactly.
Tensor resize_bilinear(const Tensor& image, std::size_t oh, std::size_t ow) {
    const std::size_t h = image.dim(1), w = image.dim(2);
    if (h == oh && w == ow) return image;
    Tensor out({1, oh, ow});
    const float sy = static_cast<float>(h) / static_cast<float>(oh);
    const float sx = static_cast<float>(w) / static_cast<float>(ow);
    for (std::size_t y = 0; y < oh; ++y) {
        float fy = (static_cast<float>(y) + 0.5f) * sy - 0.5f;
        fy = std::min(std::max(fy, 0.0f), static_cast<float>(h - 1));
        const std::size_t y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, h - 1);
        const float wy = fy - static_cast<float>(y0);
        for (std::size_t x = 0; x < ow; ++x) {
            float fx = (static_cast<float>(x) + 0.5f) * sx - 0.5f;
            fx = std::min(std::max(fx, 0.0f), static_cast<float>(w - 1));
            const std::size_t x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, w - 1);
            const float wx = fx - static_cast<float>(x0);
            const float v00 = image[y0 * w + x0], v01 = image[y0 * w + x1];
            const float v10 = image[y1 * w + x0], v11 = image[y1 * w + x1];
            out[y * ow + x] = (1 - wy) * ((1 - wx) * v00 + wx * v01) +
                              wy * ((1 - wx) * v10 + wx * v11);
        }
    }
    return out;
}

}  // namespace

Tensor augment_view(const Tensor& image, const AugmentConfig& cfg, Rng& rng) {
    if (image.rank() != 3 || image.dim(0) != 1) {
        throw DataError("augment_view: expected a [1, h, w] image, got " + image.shape_str());
    }
    const std::size_t h = image.dim(1), w = image.dim(2);
    Tensor view = image;
    if (cfg.crop_scale_lo < 1.0f) {
        const float area = rng.uniform_f(cfg.crop_scale_lo, cfg.crop_scale_hi);
        const float side_frac = std::sqrt(area);
        const std::size_t ch = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(side_frac * static_cast<float>(h))));
        const std::size_t cw = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(side_frac * static_cast<float>(w))));
        const std::size_t y0 = static_cast<std::size_t>(rng.below(h - std::min(ch, h) + 1));
        const std::size_t x0 = static_cast<std::size_t>(rng.below(w - std::min(cw, w) + 1));
        Tensor crop({1, std::min(ch, h), std::min(cw, w)});
        for (std::size_t y = 0; y < crop.dim(1); ++y) {
            for (std::size_t x = 0; x < crop.dim(2); ++x) {
                crop[y * crop.dim(2) + x] = view[(y0 + y) * w + (x0 + x)];
            }
        }
        view = resize_bilinear(crop, h, w);
    }
    if (cfg.horizontal_flip && rng.bernoulli(0.5)) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w / 2; ++x) {
                std::swap(view[y * w + x], view[y * w + (w - 1 - x)]);
            }
        }
    }
    if (cfg.brightness_jitter > 0.0f || cfg.contrast_jitter > 0.0f) {
        const float b = rng.uniform_f(-cfg.brightness_jitter, cfg.brightness_jitter);
        const float c = rng.uniform_f(1.0f - cfg.contrast_jitter, 1.0f + cfg.contrast_jitter);
        for (std::size_t i = 0; i < view.size(); ++i) {
            view[i] = std::min(1.0f, std::max(0.0f, (view[i] - 0.5f) * c + 0.5f + b));
        }
    }
    return view;
}

std::pair<Tensor, Tensor> augment_pair(const LabeledSample& sample, const AugmentConfig& cfg,
                                       Rng& rng) {
    if (sample.precomputed()) {
        throw DataError("augment_pair: sample '" + sample.id +
                        "' is a precomputed feature vector and cannot be augmented");
    }
    Tensor v1 = augment_view(sample.image, cfg, rng);
    Tensor v2 = augment_view(sample.image, cfg, rng);
    return {std::move(v1), std::move(v2)};
}

Tensor rescale_view(const Tensor& image, float factor) {
    if (factor < 1.0f) throw DataError("rescale_view: zoom factor must be >= 1");
    const std::size_t h = image.dim(1), w = image.dim(2);
    const std::size_t ch = std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(static_cast<float>(h) / factor)));
    const std::size_t cw = std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(static_cast<float>(w) / factor)));
    const std::size_t y0 = (h - ch) / 2, x0 = (w - cw) / 2;
    Tensor crop({1, ch, cw});
    for (std::size_t y = 0; y < ch; ++y) {
        for (std::size_t x = 0; x < cw; ++x) crop[y * cw + x] = image[(y0 + y) * w + (x0 + x)];
    }
    return resize_bilinear(crop, h, w);
}

}  // namespace qlife::data
