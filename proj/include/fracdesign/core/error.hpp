#pragma once

#include <stdexcept>
#include <string>

namespace fracdesign {

/// Precondition or validation failure. `field()` names the offending input when known.
class InvalidArgument : public std::invalid_argument {
 public:
  explicit InvalidArgument(const std::string& msg, std::string field = {})
      : std::invalid_argument(field.empty() ? msg : field + ": " + msg), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// An iterative procedure hit its cap. Carries the last residual (or objective gap).
class NonConvergence : public std::runtime_error {
 public:
  NonConvergence(const std::string& msg, double last_residual, int iterations)
      : std::runtime_error(msg), residual_(last_residual), iterations_(iterations) {}
  double last_residual() const noexcept { return residual_; }
  int iterations() const noexcept { return iterations_; }

 private:
  double residual_;
  int iterations_;
};

/// Malformed field artifact or report.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
inline void require(bool cond, const std::string& msg, const std::string& field = {}) {
  if (!cond) throw InvalidArgument(msg, field);
}
}  // namespace detail

}  // namespace fracdesign
