#pragma once

#include <stdexcept>
#include <string>

namespace sidecar {

// Shape or length mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Precondition on an argument's structure (triangularity, variant, range).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class SingularMatrixError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid ModelConfig or mismatched configs between two models.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed, truncated, or wrong-version serialized data.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class CorruptionError : public FormatError {
 public:
  using FormatError::FormatError;
};

// A CE/KL term needs log(q) with q effectively zero where p > 0.
class InfiniteLossError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Training produced NaN/Inf; message carries step and parameter norms.
class NonFiniteLossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sidecar
