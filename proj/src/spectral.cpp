#include "geomlens/spectral.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace geomlens::spectral {

namespace {

constexpr Eigen::Index kGramAspectRatio = 4;
constexpr Eigen::Index kMaxGramDim = 4096;

void require_finite(const Eigen::MatrixXd& m) {
  if (!m.allFinite()) throw Error(Errc::non_finite, "matrix contains NaN/Inf");
}

void fix_signs(Eigen::MatrixXd& u) {
  for (Eigen::Index j = 0; j < u.cols(); ++j) {
    Eigen::Index imax = 0;
    double best = -1.0;
    for (Eigen::Index i = 0; i < u.rows(); ++i) {
      const double a = std::abs(u(i, j));
      if (a > best) {  // strict: ties keep the lowest index
        best = a;
        imax = i;
      }
    }
    if (u(imax, j) < 0.0) u.col(j) = -u.col(j);
  }
}

}  // namespace

GramEigens gram_eigens(const Eigen::MatrixXd& m) {
  require_finite(m);
  const Eigen::Index d = m.cols();
  if (d < 1) throw Error(Errc::shape_mismatch, "matrix has no columns");
  if (d > kMaxGramDim)
    throw Error(Errc::shape_mismatch,
                "Gram eigendecomposition limited to " + std::to_string(kMaxGramDim) + " columns");

  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(d, d);
  gram.selfadjointView<Eigen::Lower>().rankUpdate(m.transpose());
  gram = gram.selfadjointView<Eigen::Lower>();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram);
  if (solver.info() != Eigen::Success)
    throw Error(Errc::convergence_failure, "symmetric eigensolver did not converge");

  GramEigens out;
  out.eigenvalues = solver.eigenvalues().reverse();  // ascending -> descending
  out.eigenvectors = solver.eigenvectors().rowwise().reverse();
  out.eigenvalues = out.eigenvalues.cwiseMax(0.0);  // PSD; negatives are rounding noise
  fix_signs(out.eigenvectors);
  return out;
}

SingularSpectrum singular_values(const Eigen::MatrixXd& m) {
  require_finite(m);
  if (m.rows() < 1 || m.cols() < 1) throw Error(Errc::shape_mismatch, "empty matrix");

  SingularSpectrum out;
  if (m.cols() <= kMaxGramDim && m.rows() >= kGramAspectRatio * m.cols()) {
    const GramEigens ge = gram_eigens(m);
    out.values = ge.eigenvalues.cwiseSqrt();
    out.method = Method::gram_eigen;
    return out;
  }
  Eigen::BDCSVD<Eigen::MatrixXd> svd(m);
  if (svd.info() != Eigen::Success)
    throw Error(Errc::convergence_failure, "SVD did not converge");
  out.values = svd.singularValues();
  out.method = Method::full_svd;
  return out;
}

double spectral_norm(const Eigen::MatrixXd& m) { return singular_values(m).values[0]; }

}  // namespace geomlens::spectral
