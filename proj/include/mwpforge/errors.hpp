#pragma once

#include <stdexcept>
#include <string>

namespace mwpforge {

// All toolkit errors derive from Error and carry a stable machine-readable
// kind string, which the CLI echoes in its error JSON.
class Error : public std::runtime_error {
public:
  Error(std::string kind, const std::string& msg)
      : std::runtime_error(msg), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

private:
  std::string kind_;
};

#define MWPFORGE_DEFINE_ERROR(Name, Kind)                    \
  class Name : public Error {                                \
  public:                                                    \
    explicit Name(const std::string& msg) : Error(Kind, msg) {} \
  }

MWPFORGE_DEFINE_ERROR(SyntaxError, "syntax");
MWPFORGE_DEFINE_ERROR(DivisionByZero, "division_by_zero");
MWPFORGE_DEFINE_ERROR(EmptyScenario, "empty_scenario");
MWPFORGE_DEFINE_ERROR(ShapeMismatch, "shape_mismatch");
MWPFORGE_DEFINE_ERROR(NonFiniteValue, "non_finite_value");
MWPFORGE_DEFINE_ERROR(TooManyNumbers, "too_many_numbers");
MWPFORGE_DEFINE_ERROR(EmptyReference, "empty_reference");
MWPFORGE_DEFINE_ERROR(SchemaError, "schema");
MWPFORGE_DEFINE_ERROR(EquationError, "equation");
MWPFORGE_DEFINE_ERROR(SolverProtocolError, "solver_protocol");
MWPFORGE_DEFINE_ERROR(ConfigError, "config");
MWPFORGE_DEFINE_ERROR(CheckpointError, "checkpoint");
MWPFORGE_DEFINE_ERROR(IoError, "io");

#undef MWPFORGE_DEFINE_ERROR

}  // namespace mwpforge
