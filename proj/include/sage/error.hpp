#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sage {

enum class ErrorKind {
  InvalidSpec,
  GeometryError,
  InvalidCase,
  InvalidWeights,
  InvalidObjectives,
  EmptyStructure,
  UndefinedMetric,
  InvalidGoalSet,
  ProtocolError,
  NoValidPlan,
  IoError,
  InvalidArgument,
  DegenerateSample,
  NotFound,
  Conflict,
  Transport,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Every failure raised by the library carries a kind so callers (CLI, HTTP
/// layer, tests) can branch on it without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace sage
