#pragma once

#include <Eigen/Core>

#include "geomlens/error.hpp"

namespace geomlens::spectral {

enum class Method { full_svd, gram_eigen };

// All min(rows, cols) singular values, descending.
struct SingularSpectrum {
  Eigen::VectorXd values;
  Method method = Method::full_svd;
};

// Eigendecomposition of the d x d Gram matrix M^T M. Eigenvalues descend and
// are clamped at zero; each eigenvector is scaled so its largest-magnitude
// entry is positive (ties broken by lowest index).
struct GramEigens {
  Eigen::VectorXd eigenvalues;   // length d
  Eigen::MatrixXd eigenvectors;  // d x d, columns aligned with eigenvalues
};

// Tall matrices (rows >= 4 * cols) go through the Gram eigenproblem, which for
// a 50k x 768 unembedding is orders faster than a full SVD; everything else
// uses a full SVD.
SingularSpectrum singular_values(const Eigen::MatrixXd& m);

GramEigens gram_eigens(const Eigen::MatrixXd& m);

// sigma_1; identical to singular_values(m).values[0].
double spectral_norm(const Eigen::MatrixXd& m);

}  // namespace geomlens::spectral
