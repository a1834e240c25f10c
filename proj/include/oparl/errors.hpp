#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace oparl {

/// Dimension mismatch between a network or buffer and the data handed to it.
class ShapeError : public std::invalid_argument {
public:
    ShapeError(const std::string& what, std::size_t expected, std::size_t actual)
        : std::invalid_argument(what + ": expected size " + std::to_string(expected) +
                                ", got " + std::to_string(actual)),
          expected_(expected),
          actual_(actual) {}

    explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}

    std::size_t expected() const { return expected_; }
    std::size_t actual() const { return actual_; }

private:
    std::size_t expected_ = 0;
    std::size_t actual_ = 0;
};

/// Invalid configuration key or value. `key()` names the offending entry.
class ConfigError : public std::invalid_argument {
public:
    ConfigError(std::string key, const std::string& message)
        : std::invalid_argument(key.empty() ? message : key + ": " + message), key_(std::move(key)) {}

    const std::string& key() const { return key_; }

private:
    std::string key_;
};

/// Non-finite value encountered during training. The message carries the
/// diagnostics (step, member, batch statistics).
class NumericAbort : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Checkpoint or snapshot document that cannot be loaded.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace oparl
