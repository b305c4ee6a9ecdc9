#pragma once

#include "projda/core.hpp"
#include "projda/linalg.hpp"

#include <vector>

namespace projda {

/// Linear observation operator H (M x N, full row rank) with Gaussian noise
/// covariance R (M x M, symmetric PSD). Caches the pseudo-inverse
/// H^T (H H^T)^{-1} and the observed-space projector.
class ObservationModel {
 public:
  ObservationModel(Matrix h, Matrix r);

  /// Observes the listed state indices with noise variance `noise_var` each.
  static ObservationModel selector(int state_dim, const std::vector<int>& indices,
                                   double noise_var);

  int obs_dim() const { return static_cast<int>(h_.rows()); }
  int state_dim() const { return static_cast<int>(h_.cols()); }

  const Matrix& h() const { return h_; }
  const Matrix& r() const { return r_; }
  const Matrix& pseudo_inverse() const { return hdag_; }
  const Matrix& projector() const { return ph_; }
  /// Square root of R, used to draw observation noise.
  const Matrix& noise_factor() const { return r_sqrt_; }
  /// Spectral pseudo-inverse of R with its whitening map.
  const linalg::SymmetricPseudoInverse& r_inverse() const { return r_inv_; }

  bool r_positive_definite() const { return r_inv_.rank == obs_dim(); }

  /// trace(H^dagger R (H^dagger)^T), the total lifted noise variance.
  double lifted_noise_trace() const { return lifted_trace_; }

  /// y~ = H^dagger y, the lift of data into model space.
  Vector lift(const Vector& y) const;

 private:
  Matrix h_;
  Matrix r_;
  Matrix hdag_;
  Matrix ph_;
  Matrix r_sqrt_;
  linalg::SymmetricPseudoInverse r_inv_;
  double lifted_trace_ = 0.0;
};

}  // namespace projda
