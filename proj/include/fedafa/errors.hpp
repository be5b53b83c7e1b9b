#pragma once

#include <stdexcept>
#include <string>

namespace fedafa {

/// Malformed or out-of-range configuration.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Missing or unreadable input artifacts.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace fedafa
