#include "geomlens/stats.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

namespace geomlens::stats {

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  const size_t n = v.size();
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based
    for (size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

double pearson(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  const Eigen::VectorXd dx = x.array() - x.mean();
  const Eigen::VectorXd dy = y.array() - y.mean();
  const double sxx = dx.squaredNorm();
  const double syy = dy.squaredNorm();
  if (sxx == 0.0 || syy == 0.0) throw Error(Errc::constant_vector, "vector has zero variance");
  return dx.dot(dy) / std::sqrt(sxx * syy);
}

Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// Least-squares coefficients of y on X. X may be rank deficient; the
// minimum-norm solution keeps predictions well defined.
Eigen::VectorXd least_squares(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(x);
  return cod.solve(y);
}

// ---- L-BFGS ----------------------------------------------------------------

struct LbfgsOutcome {
  Eigen::VectorXd x;
  double f = 0.0;
  double grad_norm = 0.0;
};

// Deterministic two-loop L-BFGS with Armijo backtracking and a fixed
// iteration budget.
template <typename Objective>
LbfgsOutcome lbfgs_minimize(Objective&& objective, Eigen::VectorXd x, int max_iters) {
  constexpr int kHistory = 10;
  constexpr double kArmijoC1 = 1e-4;
  constexpr double kGradTol = 1e-12;

  const Eigen::Index dim = x.size();
  Eigen::VectorXd grad(dim), new_grad(dim);
  double f = objective(x, grad);

  std::vector<Eigen::VectorXd> s_hist, y_hist;
  std::vector<double> rho_hist;

  for (int iter = 0; iter < max_iters; ++iter) {
    if (grad.norm() <= kGradTol) break;

    // Two-loop recursion for the search direction.
    Eigen::VectorXd q = grad;
    const int hist = static_cast<int>(s_hist.size());
    std::vector<double> alpha(static_cast<size_t>(hist));
    for (int i = hist - 1; i >= 0; --i) {
      alpha[i] = rho_hist[i] * s_hist[i].dot(q);
      q -= alpha[i] * y_hist[i];
    }
    if (hist > 0) {
      const double gamma = s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
      q *= gamma;
    }
    for (int i = 0; i < hist; ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(q);
      q += (alpha[i] - beta) * s_hist[i];
    }
    Eigen::VectorXd direction = -q;
    double dir_deriv = grad.dot(direction);
    if (!(dir_deriv < 0.0)) {  // fall back to steepest descent
      direction = -grad;
      dir_deriv = -grad.squaredNorm();
    }

    double step = 1.0;
    bool accepted = false;
    Eigen::VectorXd candidate;
    double new_f = f;
    for (int ls = 0; ls < 50; ++ls) {
      candidate = x + step * direction;
      new_f = objective(candidate, new_grad);
      if (std::isfinite(new_f) && new_f <= f + kArmijoC1 * step * dir_deriv) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;

    const Eigen::VectorXd s = candidate - x;
    const Eigen::VectorXd yv = new_grad - grad;
    const double sy = s.dot(yv);
    if (sy > 1e-14 * s.norm() * yv.norm()) {
      s_hist.push_back(s);
      y_hist.push_back(yv);
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > kHistory) {
        s_hist.erase(s_hist.begin());
        y_hist.erase(y_hist.begin());
        rho_hist.erase(rho_hist.begin());
      }
    }
    x = candidate;
    f = new_f;
    grad = new_grad;
    if (std::abs(step * dir_deriv) < 1e-16 * (1.0 + std::abs(f))) break;
  }
  return {x, f, grad.norm()};
}

// ---- Chinchilla objective ---------------------------------------------------

constexpr double kHuberDelta = 1e-3;

// Exponents are evaluated with a small floor. At alpha = 0 exactly the A-term
// degenerates into a second constant indistinguishable from E; the floor makes
// that solution strictly worse than shrinking the term to zero, so unused
// power-law terms vanish instead of absorbing constant mass.
constexpr double kMinExponent = 0.01;

struct ChinchillaObjective {
  const std::vector<ScalingPoint>& points;

  // theta = (e, a, b, alpha, beta); returns sum of Huber losses of
  // log L_hat - log L and fills the analytic gradient.
  double operator()(const Eigen::VectorXd& theta, Eigen::VectorXd& grad) const {
    const double e = theta[0], a = theta[1], b = theta[2];
    const double alpha = std::max(theta[3], kMinExponent);
    const double beta = std::max(theta[4], kMinExponent);
    grad.setZero();
    double total = 0.0;
    for (const ScalingPoint& p : points) {
      const double ln_n = std::log(p.n_params);
      const double ln_d = std::log(p.tokens);
      const double t0 = e, t1 = a - alpha * ln_n, t2 = b - beta * ln_d;
      const double mx = std::max({t0, t1, t2});
      const double z0 = std::exp(t0 - mx), z1 = std::exp(t1 - mx), z2 = std::exp(t2 - mx);
      const double zsum = z0 + z1 + z2;
      const double log_pred = mx + std::log(zsum);
      const double r = log_pred - std::log(p.loss);

      double dloss;
      if (std::abs(r) <= kHuberDelta) {
        total += 0.5 * r * r;
        dloss = r;
      } else {
        total += kHuberDelta * (std::abs(r) - 0.5 * kHuberDelta);
        dloss = r > 0 ? kHuberDelta : -kHuberDelta;
      }
      const double w0 = z0 / zsum, w1 = z1 / zsum, w2 = z2 / zsum;
      grad[0] += dloss * w0;
      grad[1] += dloss * w1;
      grad[2] += dloss * w2;
      if (theta[3] > kMinExponent) grad[3] += dloss * w1 * (-ln_n);
      if (theta[4] > kMinExponent) grad[4] += dloss * w2 * (-ln_d);
    }
    return total;
  }
};

}  // namespace

double predict(const ScalingLawFit& fit, double n_params, double tokens) {
  return fit.E + fit.A / std::pow(n_params, fit.alpha) + fit.B / std::pow(tokens, fit.beta);
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size())
    throw Error(Errc::length_mismatch, std::to_string(x.size()) + " vs " + std::to_string(y.size()));
  if (x.size() < 3) throw Error(Errc::too_few_points, "need at least 3 observations");
  const std::vector<double> rx = average_ranks(x);
  const std::vector<double> ry = average_ranks(y);
  return pearson(to_vector(rx), to_vector(ry));
}

Eigen::VectorXd residualize_linear(const Eigen::VectorXd& y, const Eigen::MatrixXd& covariates) {
  if (covariates.rows() != y.size())
    throw Error(Errc::length_mismatch, "covariate rows do not match y length");
  Eigen::MatrixXd x(y.size(), covariates.cols() + 1);
  x.col(0).setOnes();
  if (covariates.cols() > 0) x.rightCols(covariates.cols()) = covariates;

  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(x);
  if (cod.rank() < x.cols())
    throw Error(Errc::rank_deficient, "design matrix rank " + std::to_string(cod.rank()) +
                                          " < " + std::to_string(x.cols()) + " columns");
  return y - x * cod.solve(y);
}

ScalingLawFit fit_chinchilla(const std::vector<ScalingPoint>& points) {
  if (points.size() < 6)
    throw Error(Errc::too_few_points, "need at least 6 points, got " + std::to_string(points.size()));
  std::set<double> distinct_n, distinct_d;
  double loss_min = std::numeric_limits<double>::infinity();
  double loss_mean = 0.0, ln_n_mean = 0.0, ln_d_mean = 0.0;
  for (const ScalingPoint& p : points) {
    if (!(p.n_params > 0.0 && p.tokens > 0.0 && p.loss > 0.0) || !std::isfinite(p.loss))
      throw Error(Errc::invariant_violation, "scaling points need positive finite N, D, loss");
    distinct_n.insert(p.n_params);
    distinct_d.insert(p.tokens);
    loss_min = std::min(loss_min, p.loss);
    loss_mean += p.loss;
    ln_n_mean += std::log(p.n_params);
    ln_d_mean += std::log(p.tokens);
  }
  if (distinct_n.size() < 2 || distinct_d.size() < 2)
    throw Error(Errc::degenerate_grid, "need at least 2 distinct N and 2 distinct D");
  const double n = static_cast<double>(points.size());
  loss_mean /= n;
  ln_n_mean /= n;
  ln_d_mean /= n;

  const ChinchillaObjective objective{points};
  const double e0 = std::log(0.9 * loss_min);
  const double excess = std::max(loss_mean - 0.9 * loss_min, 0.05 * loss_mean);

  constexpr double kExponentGrid[] = {0.0, 0.5, 1.0, 1.5, 2.0};
  LbfgsOutcome best;
  bool have_best = false;
  for (const double alpha0 : kExponentGrid) {
    for (const double beta0 : kExponentGrid) {
      Eigen::VectorXd theta(5);
      theta << e0, std::log(0.5 * excess) + alpha0 * ln_n_mean,
          std::log(0.5 * excess) + beta0 * ln_d_mean, alpha0, beta0;
      const LbfgsOutcome got = lbfgs_minimize(objective, theta, 500);
      if (!std::isfinite(got.f)) continue;
      if (!have_best || got.f < best.f) {
        best = got;
        have_best = true;
      }
    }
  }
  if (!have_best)
    throw Error(Errc::convergence_failure, "no admissible scaling-law fit found");

  ScalingLawFit fit;
  fit.E = std::exp(best.x[0]);
  fit.A = std::exp(best.x[1]);
  fit.B = std::exp(best.x[2]);
  fit.alpha = std::max(best.x[3], kMinExponent);  // the value the objective used
  fit.beta = std::max(best.x[4], kMinExponent);
  fit.objective_value = best.f;
  fit.converged = best.grad_norm < 1e-8;
  return fit;
}

double residual_spearman_chinchilla(const std::vector<ScalingPoint>& points,
                                    const std::vector<double>& metric_values) {
  if (metric_values.size() != points.size())
    throw Error(Errc::length_mismatch, "metric values do not align with points");
  const ScalingLawFit fit = fit_chinchilla(points);
  std::vector<double> residuals(points.size());
  for (size_t i = 0; i < points.size(); ++i)
    residuals[i] = points[i].loss - predict(fit, points[i].n_params, points[i].tokens);
  return spearman(metric_values, residuals);
}

double partial_spearman(const std::vector<double>& x, const std::vector<double>& y,
                        const Eigen::MatrixXd& covariates) {
  if (x.size() != y.size())
    throw Error(Errc::length_mismatch, std::to_string(x.size()) + " vs " + std::to_string(y.size()));
  if (covariates.cols() == 0) return spearman(x, y);
  const Eigen::Index n = static_cast<Eigen::Index>(x.size());
  if (covariates.rows() != n)
    throw Error(Errc::length_mismatch, "covariate rows do not match x length");
  if (n < covariates.cols() + 3)
    throw Error(Errc::too_few_points, "need n >= covariate count + 3");

  const Eigen::VectorXd rx = to_vector(average_ranks(x));
  const Eigen::VectorXd ry = to_vector(average_ranks(y));
  if ((rx.array() == rx[0]).all() || (ry.array() == ry[0]).all())
    throw Error(Errc::constant_vector, "vector has zero variance");

  Eigen::MatrixXd ranked_cov(n, covariates.cols());
  for (Eigen::Index j = 0; j < covariates.cols(); ++j) {
    std::vector<double> col(covariates.col(j).data(), covariates.col(j).data() + n);
    ranked_cov.col(j) = to_vector(average_ranks(col));
  }
  const Eigen::VectorXd res_x = residualize_linear(rx, ranked_cov);
  const Eigen::VectorXd res_y = residualize_linear(ry, ranked_cov);

  // A variable fully explained by the covariates has no unique variance left;
  // correlating leftover rounding noise would be meaningless.
  const double scale_x = (rx.array() - rx.mean()).matrix().norm();
  const double scale_y = (ry.array() - ry.mean()).matrix().norm();
  if (res_x.norm() <= 1e-8 * scale_x || res_y.norm() <= 1e-8 * scale_y) return 0.0;
  return pearson(res_x, res_y);
}

KfoldR2 kfold_r2(const std::vector<ScalingPoint>& points,
                 const std::vector<double>& metric_values, int k, std::uint64_t seed) {
  const size_t n = points.size();
  if (metric_values.size() != n)
    throw Error(Errc::length_mismatch, "metric values do not align with points");
  if (k < 2 || n < 2 * static_cast<size_t>(k))
    throw Error(Errc::too_few_points,
                "need n >= 2k with k >= 2 (n=" + std::to_string(n) + ", k=" + std::to_string(k) + ")");

  Eigen::MatrixXd base(static_cast<Eigen::Index>(n), 4);
  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  for (size_t i = 0; i < n; ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    base(row, 0) = 1.0;
    base(row, 1) = std::log(points[i].n_params);
    base(row, 2) = std::log(points[i].tokens);
    base(row, 3) = std::log(6.0 * points[i].n_params * points[i].tokens);
    y[row] = points[i].loss;
  }
  Eigen::MatrixXd augmented(static_cast<Eigen::Index>(n), 5);
  augmented.leftCols(4) = base;
  augmented.col(4) = to_vector(metric_values);

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  Eigen::VectorXd pred_base(static_cast<Eigen::Index>(n)), pred_aug(static_cast<Eigen::Index>(n));
  for (int fold = 0; fold < k; ++fold) {
    const size_t begin = fold * n / static_cast<size_t>(k);
    const size_t end = (fold + 1) * n / static_cast<size_t>(k);
    std::vector<size_t> test(order.begin() + static_cast<long>(begin),
                             order.begin() + static_cast<long>(end));
    std::vector<size_t> train;
    train.reserve(n - test.size());
    train.insert(train.end(), order.begin(), order.begin() + static_cast<long>(begin));
    train.insert(train.end(), order.begin() + static_cast<long>(end), order.end());

    Eigen::MatrixXd xb(static_cast<Eigen::Index>(train.size()), 4);
    Eigen::MatrixXd xa(static_cast<Eigen::Index>(train.size()), 5);
    Eigen::VectorXd yt(static_cast<Eigen::Index>(train.size()));
    for (size_t i = 0; i < train.size(); ++i) {
      xb.row(static_cast<Eigen::Index>(i)) = base.row(static_cast<Eigen::Index>(train[i]));
      xa.row(static_cast<Eigen::Index>(i)) = augmented.row(static_cast<Eigen::Index>(train[i]));
      yt[static_cast<Eigen::Index>(i)] = y[static_cast<Eigen::Index>(train[i])];
    }
    const Eigen::VectorXd beta_base = least_squares(xb, yt);
    const Eigen::VectorXd beta_aug = least_squares(xa, yt);
    for (const size_t t : test) {
      const auto row = static_cast<Eigen::Index>(t);
      pred_base[row] = base.row(row).dot(beta_base);
      pred_aug[row] = augmented.row(row).dot(beta_aug);
    }
  }

  const double ss_tot = (y.array() - y.mean()).square().sum();
  if (ss_tot == 0.0) throw Error(Errc::constant_vector, "loss values are constant");
  return {1.0 - (y - pred_base).squaredNorm() / ss_tot,
          1.0 - (y - pred_aug).squaredNorm() / ss_tot};
}

double kfold_delta_r2(const std::vector<ScalingPoint>& points,
                      const std::vector<double>& metric_values, int k, std::uint64_t seed) {
  const KfoldR2 r2 = kfold_r2(points, metric_values, k, seed);
  return r2.augmented - r2.baseline;
}

std::vector<CorrelationReport> run_battery(const ingest::Manifest& manifest,
                                           const std::map<std::string, ModelGeometry>& geometry,
                                           const std::string& loss_target, std::uint64_t seed) {
  const auto& records = manifest.records;
  const int n = static_cast<int>(records.size());
  if (n < 8)
    throw Error(Errc::too_few_points, "battery needs >= 8 records, got " + std::to_string(n));

  std::vector<ScalingPoint> points;
  std::vector<double> loss;
  bool all_have_repr = true;
  for (const ingest::ExperimentRecord& rec : records) {
    const auto git = geometry.find(rec.model_id);
    if (git == geometry.end() || !git->second.weight)
      throw Error(Errc::missing_geometry, "no unembedding geometry for '" + rec.model_id + "'");
    if (!git->second.representation) all_have_repr = false;
    const auto lit = rec.losses.find(loss_target);
    if (lit == rec.losses.end())
      throw Error(Errc::missing_loss,
                  "record '" + rec.model_id + "' has no loss for task '" + loss_target + "'");
    points.push_back({static_cast<double>(rec.param_count_nonembed),
                      static_cast<double>(rec.token_budget), lit->second});
    loss.push_back(lit->second);
  }

  // Hyperparameter covariates; scale-spanning axes enter as logs. Constant
  // columns carry no confound information and are collinear with the
  // intercept, so they are dropped.
  Eigen::MatrixXd cov_full(n, 6);
  for (int i = 0; i < n; ++i) {
    const ingest::ExperimentRecord& rec = records[static_cast<size_t>(i)];
    cov_full(i, 0) = std::log(static_cast<double>(rec.batch_size));
    cov_full(i, 1) = rec.weight_decay;
    cov_full(i, 2) = rec.lr_scale;
    cov_full(i, 3) = rec.lr_anneal_frac;
    cov_full(i, 4) = std::log(static_cast<double>(rec.param_count_nonembed));
    cov_full(i, 5) = std::log(static_cast<double>(rec.token_budget));
  }
  std::vector<Eigen::Index> keep;
  for (Eigen::Index j = 0; j < cov_full.cols(); ++j)
    if ((cov_full.col(j).array() != cov_full(0, j)).any()) keep.push_back(j);
  Eigen::MatrixXd covariates(n, static_cast<Eigen::Index>(keep.size()));
  for (size_t j = 0; j < keep.size(); ++j) covariates.col(static_cast<Eigen::Index>(j)) = cov_full.col(keep[j]);

  // Shared across all metric cells for determinism and pairing.
  const ScalingLawFit fit = fit_chinchilla(points);
  std::vector<double> chin_resid(points.size());
  for (size_t i = 0; i < points.size(); ++i)
    chin_resid[i] = points[i].loss - predict(fit, points[i].n_params, points[i].tokens);
  Eigen::MatrixXd size_cov(n, 2);
  size_cov.col(0) = cov_full.col(4);
  size_cov.col(1) = cov_full.col(5);
  const Eigen::VectorXd lin_resid_v = residualize_linear(to_vector(loss), size_cov);
  const std::vector<double> lin_resid(lin_resid_v.data(), lin_resid_v.data() + lin_resid_v.size());
  const int k = n >= 10 ? 5 : std::max(2, n / 2);

  std::vector<CorrelationReport> reports;
  for (const char* name : kBatteryMetricNames) {
    const std::string metric_name = name;
    std::vector<double> metric;
    metric.reserve(records.size());
    bool available = true;
    for (const ingest::ExperimentRecord& rec : records) {
      const ModelGeometry& g = geometry.at(rec.model_id);
      if (metric_name == "R(W)") metric.push_back(g.weight->effective_rank_norm);
      else if (metric_name == "A(W)") metric.push_back(g.weight->angular_variability);
      else if (metric_name == "I(W)") {
        if (!g.weight->isotropy) { available = false; break; }
        metric.push_back(*g.weight->isotropy);
      } else if (metric_name == "R(H)") {
        if (!all_have_repr) { available = false; break; }
        metric.push_back(g.representation->effective_rank_norm);
      } else {
        if (!all_have_repr) { available = false; break; }
        metric.push_back(g.representation->angular_variability);
      }
    }
    if (!available) continue;

    CorrelationReport report;
    report.metric_name = metric_name;
    report.loss_target = loss_target;
    report.n_records = n;
    report.seed = seed;

    const bool metric_constant =
        std::all_of(metric.begin(), metric.end(), [&](double v) { return v == metric[0]; });
    if (metric_constant) {
      report.na_reason = "const";
    } else {
      report.raw_spearman = spearman(metric, loss);
      report.residual_spearman_linear = spearman(metric, lin_resid);
      report.residual_spearman_chinchilla = spearman(metric, chin_resid);
      report.partial_spearman = stats::partial_spearman(metric, loss, covariates);
    }
    report.delta_r2 = kfold_delta_r2(points, metric, k, seed);
    reports.push_back(std::move(report));
  }
  return reports;
}

}  // namespace geomlens::stats
