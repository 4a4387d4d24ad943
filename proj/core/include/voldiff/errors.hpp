#pragma once

#include <stdexcept>
#include <string>

namespace voldiff {

/// Error classes map 1:1 onto CLI exit codes (see tools/).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct MissingArtifactError : std::runtime_error {
    explicit MissingArtifactError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Non-finite values where finite ones are required (diverged training, bad input data).
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Container-file failures. The kind distinguishes bad magic, truncated
/// payloads and header/length mismatches so callers can report them apart.
struct IoError : std::runtime_error {
    enum class Kind { OpenFailed, BadMagic, BadHeader, Truncated, SizeMismatch, WriteFailed };
    Kind kind;
    IoError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

}  // namespace voldiff
