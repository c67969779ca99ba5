#pragma once

#include <Eigen/Core>
#include <optional>

#include "geomlens/error.hpp"
#include "geomlens/tensor_io.hpp"

namespace geomlens::geometry {

enum class IsotropySigns { both, positive_only };

struct MetricConfig {
  // Added to each normalized singular value before the entropy. Must lie in
  // (0, 1e-6].
  double epsilon = 1e-12;
  // When set, p is rescaled to sum to one after the epsilon shift; the default
  // applies the shift as written, unrenormalized.
  bool renormalize_after_epsilon = false;
  IsotropySigns isotropy_signs = IsotropySigns::both;
};

struct EffectiveRank {
  double raw = 0.0;         // exp of the spectrum entropy, >= 1
  double normalized = 0.0;  // raw / min(rows, cols), clamped into (0, 1]
  bool clamped = false;     // true when the epsilon perturbation pushed it past 1
};

struct AngularVariability {
  double value = 0.0;               // mean pairwise cosine of nonzero rows
  Eigen::Index excluded_rows = 0;   // zero-norm rows dropped from the average
};

enum class Target { unembedding, representation };

struct GeometrySummary {
  double effective_rank_raw = 0.0;
  double effective_rank_norm = 0.0;
  bool effective_rank_clamped = false;
  std::optional<double> isotropy;  // absent for representation targets
  double angular_variability = 0.0;
  Eigen::Index zero_rows_excluded = 0;
  Target target = Target::unembedding;
  MetricConfig config_used;
};

// exp(-sum p_k log p_k) over p_k = sigma_k / ||sigma||_1 + epsilon, using all
// min(rows, cols) singular values.
EffectiveRank effective_rank(const Eigen::MatrixXd& m, const MetricConfig& cfg = {});

// min_c Z(c) / max_c Z(c), where c ranges over the Gram eigenvectors (both
// signs by default) and Z(c) = sum_i exp(<c, row_i>), evaluated via
// log-sum-exp.
double isotropy(const Eigen::MatrixXd& m, const MetricConfig& cfg = {});
double isotropy(const ingest::WeightMatrix& w, const MetricConfig& cfg = {});

// Mean pairwise cosine similarity of rows, via the identity
// sum_{i != j} cos(w_i, w_j) = ||sum_i w_i/||w_i||||^2 - v' with v' the number
// of nonzero rows. Zero rows are excluded from both the sum and the count.
AngularVariability angular_variability(const Eigen::MatrixXd& m);

GeometrySummary summarize(const ingest::WeightMatrix& w, const MetricConfig& cfg = {});
GeometrySummary summarize(const ingest::RepresentationMatrix& h, const MetricConfig& cfg = {});

}  // namespace geomlens::geometry
