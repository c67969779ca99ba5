#pragma once

#include <stdexcept>
#include <string>

namespace geomlens {

// Every failure mode the library reports. Codes are stable; messages carry
// the offending file/record/index.
enum class Errc {
  unknown_format,
  tensor_not_found,
  non_finite,
  shape_mismatch,
  parse_error,
  duplicate_model_id,
  invariant_violation,
  missing_loss,
  zero_matrix,
  too_few_rows,
  convergence_failure,
  constant_vector,
  length_mismatch,
  rank_deficient,
  too_few_points,
  degenerate_grid,
  missing_geometry,
  unknown_axis,
  empty_input,
};

const char* to_string(Errc code);

// Convergence failures map to process exit code 2, everything else to 1.
bool is_convergence(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace geomlens
