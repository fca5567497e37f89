#include "qlife/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "qlife/errors.hpp"

using nlohmann::json;

namespace qlife::checkpoint {

namespace {

constexpr char kMagic[4] = {'Q', 'L', 'C', 'K'};

std::uint64_t fnv1a(const unsigned char* data, std::size_t len, std::uint64_t hash = 0xcbf29ce484222325ull) {
    for (std::size_t i = 0; i < len; ++i) {
        hash ^= data[i];
        hash *= 0x100000001b3ull;
    }
    return hash;
}

void put_u32_le(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void put_u64_le(std::vector<unsigned char>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint32_t get_u32_le(const unsigned char* p) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

std::uint64_t get_u64_le(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}

json backbone_to_json(const model::BackboneConfig& c) {
    return {{"image_channels", c.image_channels}, {"conv_channels", c.conv_channels},
            {"conv_kernel", c.conv_kernel},       {"conv_stride", c.conv_stride},
            {"conv_padding", c.conv_padding},     {"spp_levels", c.spp_levels},
            {"embed_dim", c.embed_dim},           {"num_classes", c.num_classes},
            {"scl_weight", c.scl_weight},         {"dropout_rate", c.dropout_rate}};
}

model::BackboneConfig backbone_from_json(const json& j) {
    model::BackboneConfig c;
    c.image_channels = j.at("image_channels").get<int>();
    c.conv_channels = j.at("conv_channels").get<std::vector<int>>();
    c.conv_kernel = j.at("conv_kernel").get<int>();
    c.conv_stride = j.at("conv_stride").get<int>();
    c.conv_padding = j.at("conv_padding").get<int>();
    c.spp_levels = j.at("spp_levels").get<std::vector<int>>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.num_classes = j.at("num_classes").get<int>();
    c.scl_weight = j.at("scl_weight").get<float>();
    c.dropout_rate = j.at("dropout_rate").get<float>();
    return c;
}

void write_container(const std::string& path, const std::string& kind, const json& arch,
                     const std::vector<std::string>& label_map, const json& metadata,
                     const std::vector<Tensor*>& blobs) {
    json header;
    header["kind"] = kind;
    header["arch"] = arch;
    header["label_map"] = label_map;
    header["meta"] = metadata;
    json blob_table = json::array();
    for (std::size_t i = 0; i < blobs.size(); ++i) {
        blob_table.push_back({{"name", "b" + std::to_string(i)}, {"shape", blobs[i]->shape()}});
    }
    header["blobs"] = std::move(blob_table);
    const std::string header_str = header.dump();

    std::vector<unsigned char> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u32_le(out, kFormatVersion);
    put_u64_le(out, header_str.size());
    out.insert(out.end(), header_str.begin(), header_str.end());
    for (const Tensor* t : blobs) {
        for (std::size_t i = 0; i < t->size(); ++i) {
            put_u32_le(out, std::bit_cast<std::uint32_t>((*t)[i]));
        }
    }
    put_u64_le(out, fnv1a(out.data(), out.size()));

    std::ofstream file(path, std::ios::binary);
    if (!file) throw CheckpointError("cannot open for writing: " + path);
    file.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!file) throw CheckpointError("write failed: " + path);
}

struct Container {
    json header;
    std::vector<unsigned char> blob_bytes;
};

Container read_container(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw CheckpointError("cannot open checkpoint: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(file)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 24 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw CheckpointError("not a checkpoint file: " + path);
    }
    const std::uint32_t version = get_u32_le(&bytes[4]);
    if (version != kFormatVersion) {
        throw CheckpointError("checkpoint format version " + std::to_string(version) +
                              " not supported (expected " + std::to_string(kFormatVersion) + "): " + path);
    }
    const std::uint64_t stored = get_u64_le(&bytes[bytes.size() - 8]);
    const std::uint64_t computed = fnv1a(bytes.data(), bytes.size() - 8);
    if (stored != computed) {
        throw CheckpointError("checkpoint checksum mismatch (file corrupt or truncated): " + path);
    }
    const std::uint64_t header_len = get_u64_le(&bytes[8]);
    if (16 + header_len + 8 > bytes.size()) {
        throw CheckpointError("checkpoint header overruns file: " + path);
    }
    Container c;
    try {
        c.header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
    } catch (const std::exception& e) {
        throw CheckpointError("malformed checkpoint header in " + path + ": " + e.what());
    }
    c.blob_bytes.assign(bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len), bytes.end() - 8);
    return c;
}

void fill_blobs(const Container& c, const std::vector<Tensor*>& dests, const std::string& path) {
    const json& table = c.header.at("blobs");
    if (table.size() != dests.size()) {
        throw CheckpointError("checkpoint blob count " + std::to_string(table.size()) +
                              " does not match architecture (" + std::to_string(dests.size()) +
                              "): " + path);
    }
    std::size_t offset = 0;
    for (std::size_t i = 0; i < dests.size(); ++i) {
        const auto shape = table[i].at("shape").get<std::vector<std::size_t>>();
        if (shape != dests[i]->shape()) {
            throw CheckpointError("checkpoint blob " + std::to_string(i) + " shape mismatch: " + path);
        }
        const std::size_t need = dests[i]->size() * 4;
        if (offset + need > c.blob_bytes.size()) {
            throw CheckpointError("checkpoint blob data truncated: " + path);
        }
        for (std::size_t k = 0; k < dests[i]->size(); ++k) {
            (*dests[i])[k] = std::bit_cast<float>(get_u32_le(&c.blob_bytes[offset + 4 * k]));
        }
        offset += need;
    }
    if (offset != c.blob_bytes.size()) {
        throw CheckpointError("checkpoint has trailing blob data: " + path);
    }
}

std::vector<Tensor*> model_blobs(model::QualityModel& m) {
    std::vector<Tensor*> blobs = m.all_params();
    for (Tensor* s : m.all_state()) blobs.push_back(s);
    return blobs;
}

}  // namespace

void save_model(model::QualityModel& model, const std::string& path, const json& metadata) {
    write_container(path, "quality-model", backbone_to_json(model.config()), model.label_map(),
                    metadata, model_blobs(model));
}

model::QualityModel load_model(const std::string& path, json* metadata) {
    Container c = read_container(path);
    if (c.header.at("kind") != "quality-model") {
        throw CheckpointError("checkpoint kind '" + c.header.at("kind").get<std::string>() +
                              "' is not a quality-model: " + path);
    }
    model::QualityModel m(backbone_from_json(c.header.at("arch")), 0);
    m.label_map() = c.header.at("label_map").get<std::vector<std::string>>();
    fill_blobs(c, model_blobs(m), path);
    if (metadata) *metadata = c.header.at("meta");
    return m;
}

void save_dann(dann::DannModel& model, const std::string& path, const json& metadata) {
    std::vector<Tensor*> blobs = model_blobs(model.base());
    for (Tensor* p : model.domain_head().params()) blobs.push_back(p);
    write_container(path, "dann-model", backbone_to_json(model.base().config()),
                    model.base().label_map(), metadata, blobs);
}

dann::DannModel load_dann(const std::string& path, json* metadata) {
    Container c = read_container(path);
    if (c.header.at("kind") != "dann-model") {
        throw CheckpointError("checkpoint kind is not a dann-model: " + path);
    }
    dann::DannModel m(backbone_from_json(c.header.at("arch")), 0);
    m.base().label_map() = c.header.at("label_map").get<std::vector<std::string>>();
    std::vector<Tensor*> blobs = model_blobs(m.base());
    for (Tensor* p : m.domain_head().params()) blobs.push_back(p);
    fill_blobs(c, blobs, path);
    if (metadata) *metadata = c.header.at("meta");
    return m;
}

std::string peek_kind(const std::string& path) {
    return read_container(path).header.at("kind").get<std::string>();
}

void save_novelty(const NoveltyArtifact& artifact, const std::string& path) {
    json j;
    j["lda"] = {{"feature_mean", artifact.lda.feature_mean},
                {"feature_std", artifact.lda.feature_std},
                {"direction", artifact.lda.direction},
                {"mu1", artifact.lda.mu1},
                {"mu2", artifact.lda.mu2},
                {"pooled_var", artifact.lda.pooled_var}};
    j["thresholds"] = {{"t_sample", artifact.thresholds.t_sample},
                       {"t_vote", artifact.thresholds.t_vote},
                       {"vote_rule_satisfied", artifact.thresholds.vote_rule_satisfied},
                       {"null_vote_histogram", artifact.thresholds.null_vote_histogram},
                       {"misid_curve", artifact.thresholds.misid_curve}};
    j["config"] = {{"batch_size", artifact.config.batch_size},
                   {"percentile", artifact.config.percentile},
                   {"alpha", artifact.config.alpha},
                   {"num_null_trials", artifact.config.num_null_trials},
                   {"sampling", artifact.config.sampling ==
                                        novelty::HypothesisConfig::NullSampling::mixed
                                    ? "mixed"
                                    : "per-class"}};
    j["known_classes"] = artifact.known_classes;
    j["new_class"] = artifact.new_class;
    std::ofstream out(path);
    if (!out) throw CheckpointError("cannot write novelty model: " + path);
    out << j.dump(2) << "\n";
}

NoveltyArtifact load_novelty(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CheckpointError("cannot open novelty model: " + path);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw CheckpointError("malformed novelty model " + path + ": " + e.what());
    }
    NoveltyArtifact a;
    const json& lda = j.at("lda");
    a.lda.feature_mean = lda.at("feature_mean").get<std::vector<double>>();
    a.lda.feature_std = lda.at("feature_std").get<std::vector<double>>();
    a.lda.direction = lda.at("direction").get<std::vector<double>>();
    a.lda.mu1 = lda.at("mu1").get<double>();
    a.lda.mu2 = lda.at("mu2").get<double>();
    a.lda.pooled_var = lda.at("pooled_var").get<double>();
    const json& th = j.at("thresholds");
    a.thresholds.t_sample = th.at("t_sample").get<double>();
    a.thresholds.t_vote = th.at("t_vote").get<int>();
    a.thresholds.vote_rule_satisfied = th.at("vote_rule_satisfied").get<bool>();
    a.thresholds.null_vote_histogram = th.at("null_vote_histogram").get<std::vector<double>>();
    a.thresholds.misid_curve = th.at("misid_curve").get<std::vector<double>>();
    const json& cfg = j.at("config");
    a.config.batch_size = cfg.at("batch_size").get<int>();
    a.config.percentile = cfg.at("percentile").get<double>();
    a.config.alpha = cfg.at("alpha").get<double>();
    a.config.num_null_trials = cfg.at("num_null_trials").get<int>();
    a.config.sampling = cfg.at("sampling") == "per-class"
                            ? novelty::HypothesisConfig::NullSampling::per_class
                            : novelty::HypothesisConfig::NullSampling::mixed;
    a.known_classes = j.at("known_classes").get<std::vector<std::string>>();
    a.new_class = j.value("new_class", std::string());
    return a;
}

}  // namespace qlife::checkpoint
