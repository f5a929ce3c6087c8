#pragma once

#include <stdexcept>
#include <string>

namespace aida {

// Contract violations: bad shapes, off-simplex weights, invalid arguments.
struct ContractError : std::invalid_argument {
  explicit ContractError(const std::string& what) : std::invalid_argument(what) {}
};

// Math domain errors: log/sqrt of negative input, non-finite results.
struct MathDomainError : std::domain_error {
  explicit MathDomainError(const std::string& what) : std::domain_error(what) {}
};

// Config file problems: unknown keys, bad version, missing sections.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// File I/O failures, carries the offending path in the message.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Batch sampling could not be satisfied (too few identities/instances).
struct SamplingError : std::runtime_error {
  explicit SamplingError(const std::string& what) : std::runtime_error(what) {}
};

// Training diverged or clustering failed beyond retry budget.
struct TrainingError : std::runtime_error {
  explicit TrainingError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace aida
