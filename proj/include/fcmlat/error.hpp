#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace fcmlat {

/// Malformed or inconsistent file contents. The message names the offending field.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad user configuration (config files, boundary regions, CLI flags).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Iterative solver failed to reach its tolerance.
class ConvergenceError : public std::runtime_error {
public:
    ConvergenceError(const std::string& what, std::vector<double> history)
        : std::runtime_error(what), residual_history(std::move(history)) {}

    std::vector<double> residual_history;
};

} // namespace fcmlat
