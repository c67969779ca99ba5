#include "geomlens/error.hpp"

namespace geomlens {

const char* to_string(Errc code) {
  switch (code) {
    case Errc::unknown_format: return "UnknownFormat";
    case Errc::tensor_not_found: return "TensorNotFound";
    case Errc::non_finite: return "NonFinite";
    case Errc::shape_mismatch: return "ShapeMismatch";
    case Errc::parse_error: return "ParseError";
    case Errc::duplicate_model_id: return "DuplicateModelId";
    case Errc::invariant_violation: return "InvariantViolation";
    case Errc::missing_loss: return "MissingLoss";
    case Errc::zero_matrix: return "ZeroMatrix";
    case Errc::too_few_rows: return "TooFewRows";
    case Errc::convergence_failure: return "ConvergenceFailure";
    case Errc::constant_vector: return "ConstantVector";
    case Errc::length_mismatch: return "LengthMismatch";
    case Errc::rank_deficient: return "RankDeficient";
    case Errc::too_few_points: return "TooFewPoints";
    case Errc::degenerate_grid: return "DegenerateGrid";
    case Errc::missing_geometry: return "MissingGeometry";
    case Errc::unknown_axis: return "UnknownAxis";
    case Errc::empty_input: return "EmptyInput";
  }
  return "Error";
}

bool is_convergence(Errc code) { return code == Errc::convergence_failure; }

}  // namespace geomlens
