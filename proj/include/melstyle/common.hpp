#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace melstyle {

// Error taxonomy. The CLI maps ConfigError/UsageError to exit code 2,
// everything else to exit code 1.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config: " + msg) {}
};

struct InputError : Error {
    explicit InputError(const std::string& msg) : Error("input: " + msg) {}
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error("shape: " + msg) {}
};

struct UsageError : Error {
    explicit UsageError(const std::string& msg) : Error("usage: " + msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error("io: " + msg) {}
};

struct TrainingError : Error {
    explicit TrainingError(const std::string& msg) : Error("training: " + msg) {}
};

struct DegenerateInputError : Error {
    explicit DegenerateInputError(const std::string& msg)
        : Error("degenerate input: " + msg) {}
};

}  // namespace melstyle
