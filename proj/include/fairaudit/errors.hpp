#pragma once

#include <stdexcept>
#include <string>

namespace fairaudit {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// A required column is missing or the schema is inconsistent.
class SchemaError : public Error {
public:
  using Error::Error;
};

/// A dataset ended up with no usable rows.
class EmptyDatasetError : public Error {
public:
  using Error::Error;
};

/// Not enough examples to satisfy a sampling or splitting request.
class CapacityError : public Error {
public:
  using Error::Error;
};

/// Invalid configuration value.
class ConfigError : public Error {
public:
  using Error::Error;
};

/// Tensor shapes do not chain.
class DimensionError : public Error {
public:
  using Error::Error;
};

/// Non-finite value encountered during a numeric computation.
class NumericError : public Error {
public:
  using Error::Error;
};

/// Training diverged.
class TrainingError : public Error {
public:
  using Error::Error;
};

/// A fairness intervention cannot be applied to the given data.
class InterventionError : public Error {
public:
  using Error::Error;
};

/// A metric is undefined for the given inputs.
class MetricError : public Error {
public:
  using Error::Error;
};

/// Attack preconditions violated (degenerate labels, bad ensemble, ...).
class AttackSetupError : public Error {
public:
  using Error::Error;
};

/// Filesystem failure, carries the offending path in the message.
class IoError : public Error {
public:
  using Error::Error;
};

}  // namespace fairaudit
