#include "qlife/report.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "qlife/errors.hpp"

using nlohmann::json;

namespace qlife::report {

json confusion_json(const model::EvalResult& result, const std::vector<std::string>& class_names) {
    json out;
    out["accuracy"] = result.accuracy;
    out["total"] = result.total;
    out["class_names"] = class_names;
    out["matrix"] = result.confusion;  // rows: true class, columns: predicted
    out["per_class_recall"] = result.per_class_recall;
    return out;
}

json history_json(const model::TrainHistory& history) {
    json epochs = json::array();
    for (const auto& e : history.epochs) {
        epochs.push_back({{"epoch", e.epoch},
                          {"loss", e.loss},
                          {"ce", e.ce},
                          {"scl", e.scl},
                          {"accuracy", e.accuracy}});
    }
    return epochs;
}

void write_json_file(const std::string& path, const json& j) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path);
    if (!out) throw DataError("cannot write: " + path);
    out << j.dump(2) << "\n";
    if (!out) throw DataError("write failed: " + path);
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path);
    if (!out) throw DataError("cannot write: " + path);
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (i) out << ",";
        out << header[i];
    }
    out << "\n";
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out << ",";
            out << row[i];
        }
        out << "\n";
    }
    if (!out) throw DataError("write failed: " + path);
}

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
}

}  // namespace qlife::report
