#include "sage/error.hpp"

namespace sage {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidSpec: return "invalid-spec";
    case ErrorKind::GeometryError: return "geometry-error";
    case ErrorKind::InvalidCase: return "invalid-case";
    case ErrorKind::InvalidWeights: return "invalid-weights";
    case ErrorKind::InvalidObjectives: return "invalid-objectives";
    case ErrorKind::EmptyStructure: return "empty-structure";
    case ErrorKind::UndefinedMetric: return "undefined-metric";
    case ErrorKind::InvalidGoalSet: return "invalid-goalset";
    case ErrorKind::ProtocolError: return "protocol-error";
    case ErrorKind::NoValidPlan: return "no-valid-plan";
    case ErrorKind::IoError: return "io-error";
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::DegenerateSample: return "degenerate-sample";
    case ErrorKind::NotFound: return "not-found";
    case ErrorKind::Conflict: return "conflict";
    case ErrorKind::Transport: return "transport";
  }
  return "unknown";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

}  // namespace sage
