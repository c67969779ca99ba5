#include "geomlens/geometry.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "geomlens/spectral.hpp"

namespace geomlens::geometry {

namespace {

void check_config(const MetricConfig& cfg) {
  if (!(cfg.epsilon > 0.0 && cfg.epsilon <= 1e-6))
    throw Error(Errc::invariant_violation, "epsilon must lie in (0, 1e-6]");
}

// Monotone total-order key: distinguishes -0.0 from +0.0 so that bitwise
// different rows never compare equal.
std::uint64_t order_key(double x) {
  const std::uint64_t b = std::bit_cast<std::uint64_t>(x);
  return (b & 0x8000000000000000ull) ? ~b : b | 0x8000000000000000ull;
}

// Metric values must not depend on the row order of the input, bit for bit.
// All reductions therefore run over rows sorted into a canonical order.
Eigen::MatrixXd canonical_rows(const Eigen::MatrixXd& m) {
  const Eigen::Index v = m.rows();
  std::vector<Eigen::Index> idx(static_cast<size_t>(v));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const std::uint64_t ka = order_key(m(a, j));
      const std::uint64_t kb = order_key(m(b, j));
      if (ka != kb) return ka < kb;
    }
    return false;
  });
  // Gather column by column: sequential writes, and each source column fits
  // cache, which matters at vocabulary scale.
  Eigen::MatrixXd out(v, m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    const double* src = m.data() + j * v;
    double* dst = out.data() + j * v;
    for (Eigen::Index i = 0; i < v; ++i) dst[i] = src[idx[static_cast<size_t>(i)]];
  }
  return out;
}

double log_sum_exp(const Eigen::VectorXd& x) {
  const double mx = x.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  return mx + std::log((x.array() - mx).exp().sum());
}

}  // namespace

EffectiveRank effective_rank(const Eigen::MatrixXd& m, const MetricConfig& cfg) {
  check_config(cfg);
  if (!m.allFinite()) throw Error(Errc::non_finite, "matrix contains NaN/Inf");

  const Eigen::MatrixXd canon = canonical_rows(m);
  const Eigen::VectorXd sigma = spectral::singular_values(canon).values;
  const double total = sigma.sum();
  if (total <= 0.0) throw Error(Errc::zero_matrix, "all singular values are zero");

  const double renorm =
      cfg.renormalize_after_epsilon ? 1.0 + cfg.epsilon * static_cast<double>(sigma.size()) : 1.0;
  double entropy = 0.0;
  for (Eigen::Index k = 0; k < sigma.size(); ++k) {
    const double p = (sigma[k] / total + cfg.epsilon) / renorm;
    entropy -= p * std::log(p);
  }
  EffectiveRank out;
  out.raw = std::exp(entropy);
  out.normalized = out.raw / static_cast<double>(sigma.size());
  if (out.normalized > 1.0) {
    out.normalized = 1.0;
    out.clamped = true;
  }
  return out;
}

double isotropy(const Eigen::MatrixXd& m, const MetricConfig& cfg) {
  check_config(cfg);
  if (!m.allFinite()) throw Error(Errc::non_finite, "matrix contains NaN/Inf");

  const Eigen::MatrixXd canon = canonical_rows(m);
  const spectral::GramEigens ge = spectral::gram_eigens(canon);
  const Eigen::Index v = canon.rows();
  const Eigen::Index d = canon.cols();

  double log_z_min = std::numeric_limits<double>::infinity();
  double log_z_max = -std::numeric_limits<double>::infinity();
  // One candidate per Gram eigenvector (and its negation). Dot products are
  // computed in column blocks to bound memory on large vocabularies.
  const Eigen::Index block = std::min<Eigen::Index>(d, 96);
  Eigen::MatrixXd dots(v, block);
  for (Eigen::Index j0 = 0; j0 < d; j0 += block) {
    const Eigen::Index nb = std::min(block, d - j0);
    dots.leftCols(nb).noalias() = canon * ge.eigenvectors.middleCols(j0, nb);
    for (Eigen::Index j = 0; j < nb; ++j) {
      const double lz_pos = log_sum_exp(dots.col(j));
      log_z_min = std::min(log_z_min, lz_pos);
      log_z_max = std::max(log_z_max, lz_pos);
      if (cfg.isotropy_signs == IsotropySigns::both) {
        const double lz_neg = log_sum_exp(-dots.col(j));
        log_z_min = std::min(log_z_min, lz_neg);
        log_z_max = std::max(log_z_max, lz_neg);
      }
    }
  }
  return std::exp(log_z_min - log_z_max);
}

double isotropy(const ingest::WeightMatrix& w, const MetricConfig& cfg) {
  return isotropy(w.data, cfg);
}

AngularVariability angular_variability(const Eigen::MatrixXd& m) {
  if (!m.allFinite()) throw Error(Errc::non_finite, "matrix contains NaN/Inf");

  const Eigen::MatrixXd canon = canonical_rows(m);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(canon.cols());
  Eigen::Index nonzero = 0;
  for (Eigen::Index i = 0; i < canon.rows(); ++i) {
    const double nrm = canon.row(i).norm();
    if (nrm == 0.0) continue;
    sum += canon.row(i).transpose() / nrm;
    ++nonzero;
  }
  if (nonzero < 2)
    throw Error(Errc::too_few_rows, "need at least 2 nonzero rows, got " + std::to_string(nonzero));

  const double count = static_cast<double>(nonzero);
  double value = (sum.squaredNorm() - count) / (count * count - count);
  value = std::clamp(value, -1.0, 1.0);
  return {value, m.rows() - nonzero};
}

namespace {

GeometrySummary summarize_matrix(const Eigen::MatrixXd& data, Target target,
                                 const MetricConfig& cfg) {
  GeometrySummary s;
  s.target = target;
  s.config_used = cfg;
  const EffectiveRank er = effective_rank(data, cfg);
  s.effective_rank_raw = er.raw;
  s.effective_rank_norm = er.normalized;
  s.effective_rank_clamped = er.clamped;
  if (target == Target::unembedding) s.isotropy = isotropy(data, cfg);
  const AngularVariability av = angular_variability(data);
  s.angular_variability = av.value;
  s.zero_rows_excluded = av.excluded_rows;
  return s;
}

}  // namespace

GeometrySummary summarize(const ingest::WeightMatrix& w, const MetricConfig& cfg) {
  return summarize_matrix(w.data, Target::unembedding, cfg);
}

// The partition function is only meaningful over a large fixed vector set, so
// representation targets get effective rank and angular variability only.
GeometrySummary summarize(const ingest::RepresentationMatrix& h, const MetricConfig& cfg) {
  return summarize_matrix(h.data, Target::representation, cfg);
}

}  // namespace geomlens::geometry
