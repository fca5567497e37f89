#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "qlife/model.hpp"

namespace qlife::report {

nlohmann::json confusion_json(const model::EvalResult& result,
                              const std::vector<std::string>& class_names);

nlohmann::json history_json(const model::TrainHistory& history);

void write_json_file(const std::string& path, const nlohmann::json& j);

// Plain CSV writer: header row then stringified cells.
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

std::string format_double(double v);

}  // namespace qlife::report
