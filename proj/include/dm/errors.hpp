#pragma once

#include <stdexcept>
#include <string>

namespace dm {

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error("data error: " + msg) {}
};

struct MaskError : std::runtime_error {
    explicit MaskError(const std::string& msg) : std::runtime_error("mask error: " + msg) {}
};

// Carries the byte offset at which a container file stopped making sense.
struct FormatError : std::runtime_error {
    FormatError(const std::string& msg, std::uint64_t offset)
        : std::runtime_error("format error at byte " + std::to_string(offset) + ": " + msg),
          byte_offset(offset) {}
    std::uint64_t byte_offset;
};

struct IOError : std::runtime_error {
    explicit IOError(const std::string& msg) : std::runtime_error("io error: " + msg) {}
};

struct OptimError : std::runtime_error {
    explicit OptimError(const std::string& msg) : std::runtime_error("optim error: " + msg) {}
};

struct GradCheckError : std::runtime_error {
    explicit GradCheckError(const std::string& msg) : std::runtime_error("gradcheck error: " + msg) {}
};

} // namespace dm
