#pragma once

#include <stdexcept>
#include <string>

namespace normap {

// Two families: bad input (callers should fix their data or flags) and
// numerical failure (inputs were well-formed but the computation broke down).
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  /// Short machine-readable tag, e.g. "empty_mask".
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class DomainError : public ValidationError {
 public:
  explicit DomainError(const std::string& message) : ValidationError("domain", message) {}
};

class SkewnessOutOfRange : public ValidationError {
 public:
  explicit SkewnessOutOfRange(double gamma);
  double gamma() const noexcept { return gamma_; }

 private:
  double gamma_;
};

class GeometryError : public ValidationError {
 public:
  explicit GeometryError(const std::string& message) : ValidationError("geometry", message) {}
};

class EmptyMaskError : public ValidationError {
 public:
  explicit EmptyMaskError(const std::string& message) : ValidationError("empty_mask", message) {}
};

class DesignError : public ValidationError {
 public:
  explicit DesignError(const std::string& message) : ValidationError("design", message) {}
};

class DegenerateDataError : public ValidationError {
 public:
  explicit DegenerateDataError(const std::string& message)
      : ValidationError("degenerate_data", message) {}
};

class ParseError : public ValidationError {
 public:
  explicit ParseError(const std::string& message) : ValidationError("parse", message) {}
};

class SchemaError : public ValidationError {
 public:
  explicit SchemaError(const std::string& message) : ValidationError("schema", message) {}
};

class ConditioningError : public NumericalError {
 public:
  ConditioningError(const std::string& message, double condition_estimate)
      : NumericalError("conditioning", message), condition_(condition_estimate) {}
  double condition_estimate() const noexcept { return condition_; }

 private:
  double condition_;
};

}  // namespace normap
