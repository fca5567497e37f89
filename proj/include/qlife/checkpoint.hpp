#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "qlife/dann.hpp"
#include "qlife/model.hpp"
#include "qlife/novelty.hpp"

namespace qlife::checkpoint {

// Self-describing binary container: magic + format version + JSON header
// (architecture, label map, metadata, blob table) + raw little-endian
// float32 blobs + trailing FNV-1a checksum. Round trips are bit-exact.
inline constexpr std::uint32_t kFormatVersion = 1;

void save_model(model::QualityModel& model, const std::string& path,
                const nlohmann::json& metadata = {});
model::QualityModel load_model(const std::string& path, nlohmann::json* metadata = nullptr);

void save_dann(dann::DannModel& model, const std::string& path,
               const nlohmann::json& metadata = {});
dann::DannModel load_dann(const std::string& path, nlohmann::json* metadata = nullptr);

// Returns the header's "kind" field ("quality-model" or "dann-model").
std::string peek_kind(const std::string& path);

// Novelty artifacts (LDA + calibrated thresholds) persist as JSON; doubles
// survive the round trip exactly via shortest-representation printing.
struct NoveltyArtifact {
    novelty::LdaModel lda;
    novelty::CalibratedThresholds thresholds;
    novelty::HypothesisConfig config;
    std::vector<std::string> known_classes;
    std::string new_class;
};

void save_novelty(const NoveltyArtifact& artifact, const std::string& path);
NoveltyArtifact load_novelty(const std::string& path);

}  // namespace qlife::checkpoint
