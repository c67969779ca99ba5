#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "geomlens/error.hpp"
#include "geomlens/geometry.hpp"
#include "geomlens/manifest.hpp"

namespace geomlens::stats {

// One model on the scaling surface: non-embedding parameter count, token
// budget, and an observed loss.
struct ScalingPoint {
  double n_params = 0.0;
  double tokens = 0.0;
  double loss = 0.0;
};

// L(N, D) = E + A / N^alpha + B / D^beta, fitted in log space with a Huber
// objective over the parameterization (e, a, b, alpha, beta) where
// E = exp(e), A = exp(a), B = exp(b).
struct ScalingLawFit {
  double E = 0.0;
  double A = 0.0;
  double B = 0.0;
  double alpha = 0.0;
  double beta = 0.0;
  double objective_value = 0.0;
  bool converged = false;
};

double predict(const ScalingLawFit& fit, double n_params, double tokens);

// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

// OLS residuals of y on [intercept | covariates]. Throws RankDeficient when
// the augmented design is not full column rank.
Eigen::VectorXd residualize_linear(const Eigen::VectorXd& y, const Eigen::MatrixXd& covariates);

ScalingLawFit fit_chinchilla(const std::vector<ScalingPoint>& points);

// Spearman of (loss - L_hat) against the metric values.
double residual_spearman_chinchilla(const std::vector<ScalingPoint>& points,
                                    const std::vector<double>& metric_values);

// Rank-transforms x, y, and every covariate column, residualizes the ranked
// x and y on the ranked covariates, and returns the Pearson correlation of the
// residuals. Empty covariates collapse to plain Spearman. When either residual
// vector is numerically zero (the variable is fully explained by the
// covariates), the partial correlation is 0.
double partial_spearman(const std::vector<double>& x, const std::vector<double>& y,
                        const Eigen::MatrixXd& covariates);

// Pooled out-of-fold R^2 of the baseline model (log N, log D, log 6ND) and of
// the baseline augmented with the metric column. Folds come from a seeded
// shuffle.
struct KfoldR2 {
  double baseline = 0.0;
  double augmented = 0.0;
};
KfoldR2 kfold_r2(const std::vector<ScalingPoint>& points,
                 const std::vector<double>& metric_values, int k, std::uint64_t seed);

// augmented - baseline; may be negative.
double kfold_delta_r2(const std::vector<ScalingPoint>& points,
                      const std::vector<double>& metric_values, int k, std::uint64_t seed);

// Geometry for one model: unembedding summary (required by the battery) and
// an optional representation summary.
struct ModelGeometry {
  std::optional<geometry::GeometrySummary> weight;
  std::optional<geometry::GeometrySummary> representation;
};

// The five-statistic battery for one (metric, loss target) pair. Cells are
// absent when the statistic is undefined for the inputs (e.g. the metric is
// constant); na_reason says why.
struct CorrelationReport {
  std::string metric_name;
  std::string loss_target;
  std::optional<double> raw_spearman;
  std::optional<double> residual_spearman_linear;
  std::optional<double> residual_spearman_chinchilla;
  std::optional<double> partial_spearman;
  std::optional<double> delta_r2;
  std::string na_reason;
  int n_records = 0;
  std::uint64_t seed = 0;
};

inline constexpr const char* kBatteryMetricNames[] = {"R(W)", "A(W)", "I(W)", "R(H)", "A(H)"};

// Runs the battery for every available metric against `loss_target`.
// Unembedding geometry must be present for every record; representation
// metrics are included only when every record has one. Partial correlations
// control for {log batch, weight decay, lr scale, lr anneal frac, log N,
// log D}, dropping constant columns.
std::vector<CorrelationReport> run_battery(const ingest::Manifest& manifest,
                                           const std::map<std::string, ModelGeometry>& geometry,
                                           const std::string& loss_target, std::uint64_t seed);

}  // namespace geomlens::stats
