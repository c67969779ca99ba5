#pragma once

// Brute-force reference implementations used to check the production code.
// These deliberately take the slow, direct route: Jacobi SVD instead of the
// Gram/BDC paths, explicit partition-function sums instead of log-sum-exp,
// and O(v^2) cosine loops instead of the row-sum identity.

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <vector>

namespace oracles {

inline Eigen::VectorXd singular_values(const Eigen::MatrixXd& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  return svd.singularValues();
}

inline double effective_rank_raw(const Eigen::MatrixXd& m, double epsilon) {
  const Eigen::VectorXd sigma = singular_values(m);
  const double total = sigma.sum();
  double entropy = 0.0;
  for (Eigen::Index k = 0; k < sigma.size(); ++k) {
    const double p = sigma[k] / total + epsilon;
    entropy -= p * std::log(p);
  }
  return std::exp(entropy);
}

// Candidate directions from the right singular vectors (the Gram matrix
// eigenvectors), with the same largest-entry-positive sign convention the
// library documents. Z evaluated naively; callers must keep dot products small
// enough that exp does not overflow.
inline double isotropy(const Eigen::MatrixXd& m, bool both_signs) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeFullV);
  Eigen::MatrixXd u = svd.matrixV();
  for (Eigen::Index j = 0; j < u.cols(); ++j) {
    Eigen::Index imax = 0;
    double best = -1.0;
    for (Eigen::Index i = 0; i < u.rows(); ++i) {
      if (std::abs(u(i, j)) > best) {
        best = std::abs(u(i, j));
        imax = i;
      }
    }
    if (u(imax, j) < 0.0) u.col(j) = -u.col(j);
  }

  double z_min = std::numeric_limits<double>::infinity();
  double z_max = -std::numeric_limits<double>::infinity();
  const auto consider = [&](const Eigen::VectorXd& c) {
    double z = 0.0;
    for (Eigen::Index i = 0; i < m.rows(); ++i) z += std::exp(m.row(i).dot(c));
    z_min = std::min(z_min, z);
    z_max = std::max(z_max, z);
  };
  for (Eigen::Index j = 0; j < u.cols(); ++j) {
    consider(u.col(j));
    if (both_signs) consider(-u.col(j));
  }
  return z_min / z_max;
}

inline double angular_variability(const Eigen::MatrixXd& m) {
  std::vector<Eigen::VectorXd> rows;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const double nrm = m.row(i).norm();
    if (nrm == 0.0) continue;
    rows.push_back(m.row(i).transpose() / nrm);
  }
  const size_t v = rows.size();
  double sum = 0.0;
  for (size_t i = 0; i < v; ++i)
    for (size_t j = 0; j < v; ++j)
      if (i != j) sum += rows[i].dot(rows[j]);
  return sum / (static_cast<double>(v) * v - static_cast<double>(v));
}

// OLS residuals via long-double normal equations with Gaussian elimination.
inline Eigen::VectorXd residualize(const Eigen::VectorXd& y, const Eigen::MatrixXd& covariates) {
  const Eigen::Index n = y.size();
  const Eigen::Index p = covariates.cols() + 1;
  std::vector<std::vector<long double>> xtx(p, std::vector<long double>(p, 0.0L));
  std::vector<long double> xty(p, 0.0L);
  const auto x_at = [&](Eigen::Index i, Eigen::Index j) -> long double {
    return j == 0 ? 1.0L : static_cast<long double>(covariates(i, j - 1));
  };
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index a = 0; a < p; ++a) {
      xty[a] += x_at(i, a) * static_cast<long double>(y[i]);
      for (Eigen::Index b = 0; b < p; ++b) xtx[a][b] += x_at(i, a) * x_at(i, b);
    }
  }
  for (Eigen::Index col = 0; col < p; ++col) {  // partial pivoting
    Eigen::Index pivot = col;
    for (Eigen::Index r = col + 1; r < p; ++r)
      if (std::abs(static_cast<double>(xtx[r][col])) >
          std::abs(static_cast<double>(xtx[pivot][col])))
        pivot = r;
    std::swap(xtx[col], xtx[pivot]);
    std::swap(xty[col], xty[pivot]);
    for (Eigen::Index r = 0; r < p; ++r) {
      if (r == col) continue;
      const long double f = xtx[r][col] / xtx[col][col];
      for (Eigen::Index c = 0; c < p; ++c) xtx[r][c] -= f * xtx[col][c];
      xty[r] -= f * xty[col];
    }
  }
  Eigen::VectorXd residual(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    long double pred = 0.0L;
    for (Eigen::Index a = 0; a < p; ++a) pred += (xty[a] / xtx[a][a]) * x_at(i, a);
    residual[i] = static_cast<double>(static_cast<long double>(y[i]) - pred);
  }
  return residual;
}

// ---- seeded matrix generators ------------------------------------------------

inline Eigen::MatrixXd gaussian(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols,
                                double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = nd(rng);
  return m;
}

inline Eigen::MatrixXd random_orthogonal(std::mt19937_64& rng, Eigen::Index d) {
  const Eigen::MatrixXd g = gaussian(rng, d, d);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < d; ++j)
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  return q;
}

// rank-k matrix plus optional tail noise
inline Eigen::MatrixXd low_rank(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols,
                                Eigen::Index rank, double tail = 0.0) {
  Eigen::MatrixXd m = gaussian(rng, rows, rank) * gaussian(rng, rank, cols) / std::sqrt(rank);
  if (tail > 0.0) m += gaussian(rng, rows, cols, tail);
  return m;
}

// Geometric singular-value decay from 1 down to `floor`, random factors.
inline Eigen::MatrixXd ill_conditioned(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols,
                                       double floor_ratio) {
  const Eigen::Index r = std::min(rows, cols);
  const Eigen::MatrixXd qu = random_orthogonal(rng, rows).leftCols(r);
  const Eigen::MatrixXd qv = random_orthogonal(rng, cols).leftCols(r);
  Eigen::VectorXd sigma(r);
  for (Eigen::Index k = 0; k < r; ++k)
    sigma[k] = std::pow(floor_ratio, static_cast<double>(k) / std::max<Eigen::Index>(r - 1, 1));
  return qu * sigma.asDiagonal() * qv.transpose();
}

}  // namespace oracles
