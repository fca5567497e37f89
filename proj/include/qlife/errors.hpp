#pragma once

#include <stdexcept>
#include <string>

namespace qlife {

// Error categories map to distinct CLI exit codes.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct CheckpointError : std::runtime_error {
    explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

struct EngineError : std::runtime_error {
    explicit EngineError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace qlife
