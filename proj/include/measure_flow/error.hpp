#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace measure_flow {

enum class Errc {
  invalid_argument,
  non_finite,
  non_finite_map,
  non_finite_field,
  length_mismatch,
  dim_mismatch,
  wrong_dimension,
  lp_failure,
  empty_grid,
  budget_zero,
  blow_up,
  grid_mismatch,
  calibration_failure,
  too_few_iterations,
  no_convergence,
  h_out_of_range,
  config_error,
  io_error,
};

inline std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::invalid_argument: return "InvalidArgument";
    case Errc::non_finite: return "NonFinite";
    case Errc::non_finite_map: return "NonFiniteMap";
    case Errc::non_finite_field: return "NonFiniteField";
    case Errc::length_mismatch: return "LengthMismatch";
    case Errc::dim_mismatch: return "DimMismatch";
    case Errc::wrong_dimension: return "WrongDimension";
    case Errc::lp_failure: return "LpFailure";
    case Errc::empty_grid: return "EmptyGrid";
    case Errc::budget_zero: return "BudgetZero";
    case Errc::blow_up: return "BlowUp";
    case Errc::grid_mismatch: return "GridMismatch";
    case Errc::calibration_failure: return "CalibrationFailure";
    case Errc::too_few_iterations: return "TooFewIterations";
    case Errc::no_convergence: return "NoConvergence";
    case Errc::h_out_of_range: return "HOutOfRange";
    case Errc::config_error: return "ConfigError";
    case Errc::io_error: return "IoError";
  }
  return "Unknown";
}

// All library failures are reported through this type; `code()` identifies the kind.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace measure_flow
