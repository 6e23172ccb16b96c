#pragma once

#include <stdexcept>
#include <string>

namespace modas {

/// Malformed configuration, CLI usage, or file-format problems.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Incompatible tensor shapes or graph wiring.
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Non-finite values or solver non-convergence. Carries the search step
/// index when the failure happened inside the optimization loop.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg, int step = -1)
        : std::runtime_error(step >= 0 ? msg + " (step " + std::to_string(step) + ")" : msg),
          step_(step) {}

    int step() const { return step_; }

private:
    int step_;
};

}  // namespace modas
