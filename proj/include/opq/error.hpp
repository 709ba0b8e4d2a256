#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace opq {

/// Failure categories reported by the engine. Every kind except `Usage`
/// is a domain error (the inputs were well formed but the requested
/// object does not exist or cannot be computed).
enum class ErrorKind {
  InvalidSpec,
  Usage,
  StepUnderflow,
  EnergyDrift,
  SingularCoefficient,
  NoRealBranch,
  OutOfIslandRange,
  QuadratureFailure,
  ForbiddenRegion,
  NotInIsland,
  RefinementBudgetExceeded,
  NoSolution,
  AmbiguousBracket,
  SingularLegendre,
  UnstableStep,
  EmptySelection,
  PoleDivergence,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what, double detail = 0.0)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what),
        kind_(kind),
        detail_(detail) {}

  ErrorKind kind() const noexcept { return kind_; }

  // Kind-specific payload: time reached for StepUnderflow, acceptance
  // fraction for EmptySelection, offending angle for ForbiddenRegion.
  double detail() const noexcept { return detail_; }

  bool is_domain_error() const noexcept {
    return kind_ != ErrorKind::Usage && kind_ != ErrorKind::InvalidSpec;
  }

 private:
  ErrorKind kind_;
  double detail_;
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::Usage: return "Usage";
    case ErrorKind::StepUnderflow: return "StepUnderflow";
    case ErrorKind::EnergyDrift: return "EnergyDrift";
    case ErrorKind::SingularCoefficient: return "SingularCoefficient";
    case ErrorKind::NoRealBranch: return "NoRealBranch";
    case ErrorKind::OutOfIslandRange: return "OutOfIslandRange";
    case ErrorKind::QuadratureFailure: return "QuadratureFailure";
    case ErrorKind::ForbiddenRegion: return "ForbiddenRegion";
    case ErrorKind::NotInIsland: return "NotInIsland";
    case ErrorKind::RefinementBudgetExceeded: return "RefinementBudgetExceeded";
    case ErrorKind::NoSolution: return "NoSolution";
    case ErrorKind::AmbiguousBracket: return "AmbiguousBracket";
    case ErrorKind::SingularLegendre: return "SingularLegendre";
    case ErrorKind::UnstableStep: return "UnstableStep";
    case ErrorKind::EmptySelection: return "EmptySelection";
    case ErrorKind::PoleDivergence: return "PoleDivergence";
  }
  return "Unknown";
}

}  // namespace opq
