#pragma once

#include <stdexcept>
#include <string>

namespace odrl {

// Error taxonomy used across the library. The CLI maps ConfigError and
// UsageError to exit code 2, everything else derived from Error to exit 1.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad or missing configuration: unknown keys, unparseable values, missing
// required fields, nonexistent config files.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// API misuse: stepping a finished episode, backward with a stale cache,
// malformed command lines.
class UsageError : public Error {
public:
    explicit UsageError(const std::string& msg) : Error(msg) {}
};

// Shape mismatches between tensors, layers, or images.
class DimensionError : public Error {
public:
    explicit DimensionError(const std::string& msg) : Error(msg) {}
};

// File I/O and format violations (images, checkpoints, manifests).
class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error(msg) {}
};

// Numerical failure during optimization (non-finite loss or gradients).
class TrainingError : public Error {
public:
    explicit TrainingError(const std::string& msg) : Error(msg) {}
};

}  // namespace odrl
