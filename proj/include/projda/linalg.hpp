#pragma once

#include "projda/core.hpp"

namespace projda::linalg {

/// Relative singular-value cutoff used for every rank decision and
/// pseudo-inverse in the library.
inline constexpr double kRankTolerance = 1e-10;

struct QrFactors {
  Matrix q;  // n x p, orthonormal columns
  Matrix r;  // p x p, upper triangular, positive diagonal
};

/// Reduced QR by modified Gram-Schmidt. A second pass is applied when the
/// first leaves ||Q^T Q - I|| above 1e-10. Throws SubspaceCollapse if a
/// column is numerically dependent on its predecessors.
QrFactors mgs_qr(const Matrix& w);

/// max |Q^T Q - I|
double orthonormality_error(const Matrix& q);

Matrix symmetrize(const Matrix& a);

/// Spectral pseudo-inverse of a symmetric PSD matrix. `whitener` satisfies
/// whitener^T * whitener == inverse, with one row per retained eigenvalue.
struct SymmetricPseudoInverse {
  Matrix inverse;
  Matrix whitener;
  int rank = 0;
  double largest = 0.0;
  double smallest_retained = 0.0;
};

SymmetricPseudoInverse symmetric_pinv(const Matrix& a,
                                      double rel_tol = kRankTolerance);

/// Symmetric square root of a PSD matrix (negative eigenvalues clipped).
Matrix symmetric_sqrt(const Matrix& a);

/// Moore-Penrose pseudo-inverse by SVD truncation.
Matrix pinv(const Matrix& a, double rel_tol = kRankTolerance);

int numeric_rank(const Matrix& a, double rel_tol = kRankTolerance);

/// Matrix exponential, Pade-13 scaling and squaring.
Matrix expm(const Matrix& a);

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
/// column signs fixed so that diag(R) > 0.
Matrix random_orthogonal(int n, RandomStream& rng);

/// Orthonormal basis for the orthogonal complement of span(u).
Matrix orthogonal_complement(const Matrix& u);

/// log det of a symmetric positive definite matrix via Cholesky.
double log_det_spd(const Matrix& a);

}  // namespace projda::linalg
