#pragma once

#include "projda/core.hpp"
#include "projda/models.hpp"
#include "projda/observation.hpp"

namespace projda {

/// N x p matrix with orthonormal columns and its projector U U^T.
class SubspaceBasis {
 public:
  /// Re-orthonormalizes `u` by MGS if ||U^T U - I|| exceeds 1e-10.
  explicit SubspaceBasis(Matrix u);

  static SubspaceBasis identity(int n);
  /// First p columns of the N x N identity.
  static SubspaceBasis coordinate(int n, int p);

  const Matrix& u() const { return u_; }
  int rank() const { return static_cast<int>(u_.cols()); }
  int dim() const { return static_cast<int>(u_.rows()); }
  Matrix projector() const { return u_ * u_.transpose(); }

 private:
  Matrix u_;
};

/// Discrete QR recursion U_{n+1} T_n = F'(u_n) U_n. The accumulated log
/// diagonals of T give finite-time Lyapunov exponent estimates.
class QrTracker {
 public:
  /// U_0 = MGS orthonormalization of an N x p standard Gaussian matrix.
  static QrTracker init(int n, int p, RandomStream& rng);

  explicit QrTracker(SubspaceBasis basis);

  /// Propagates the basis with the finite-difference tangent map of the
  /// deterministic flow at `u`. eps <= 0 selects default_fd_epsilon(u).
  void step(const Model& model, const Vector& u, double eps = 0.0);

  /// Re-factors an already propagated tangent image W = F'(u) U.
  void advance(const Matrix& tangent_image);

  const SubspaceBasis& basis() const { return basis_; }
  const Matrix& last_t() const { return last_t_; }
  const Vector& log_diag_sums() const { return log_sums_; }
  long steps() const { return steps_; }

  /// sum log T_ii / (steps * dt)
  Vector exponents(double dt) const;

 private:
  SubspaceBasis basis_;
  Matrix last_t_;
  Vector log_sums_;
  long steps_ = 0;
};

/// Data model y^q = H^q u + gamma, gamma ~ N(0, R^q), with
/// H^q = U^T P_H and R^q = U^T H^dagger R (H^dagger)^T U.
struct ProjectedObservationModel {
  Matrix hq;
  Matrix rq;
  int rank_rq = 0;
  /// Inverse of R^q when rank_rq == p, Moore-Penrose pseudo-inverse otherwise.
  Matrix rq_inverse;
  /// Rows span the support of R^q; whitener^T whitener == rq_inverse.
  Matrix rq_whitener;
  /// Largest over smallest retained eigenvalue of R^q.
  double rq_condition = 0.0;

  int rank() const { return static_cast<int>(hq.rows()); }
  bool invertible() const { return rank_rq == rank(); }
};

ProjectedObservationModel build_projected_model(const ObservationModel& obs,
                                                const SubspaceBasis& basis);

/// y~ = H^dagger y.
Vector lift_observation(const ObservationModel& obs, const Vector& y);

/// y^q = U^T (H^dagger y).
Vector project_observation(const ProjectedObservationModel& pm,
                           const SubspaceBasis& basis,
                           const ObservationModel& obs, const Vector& y);

/// -1/2 (y^q - H^q u)^T (R^q)^+ (y^q - H^q u)
double projected_log_likelihood(const ProjectedObservationModel& pm,
                                const Vector& yq, const Vector& u);

/// Column-wise projected_log_likelihood over a matrix of states.
Vector projected_log_likelihood_columns(const ProjectedObservationModel& pm,
                                        const Vector& yq, const Matrix& states);

/// Projected data together with the data on the orthogonal complement.
struct JointProjectedModel {
  Matrix u_perp;
  Matrix hq;
  Matrix hq_perp;
  Matrix rq;
  Matrix rq_perp;
  Matrix r12;
  Matrix r21;

  /// [[R^q, R12], [R21, R^q_perp]]
  Matrix joint_covariance() const;
};

JointProjectedModel build_orthogonal_model(const ObservationModel& obs,
                                           const SubspaceBasis& basis);

struct IntersectionResult {
  Matrix projector;
  int iterations = 0;
  bool converged = false;
  /// rank(PA) + rank(PB) - N > 0
  bool transversal = false;
};

/// Dykstra's alternating projections from x_0 = I, applied column-wise.
IntersectionResult intersect_projectors_dykstra(const Matrix& pa, const Matrix& pb,
                                                int max_iter = 5000,
                                                double tol = 1e-10);

/// Von Neumann iteration (PA PB)^k.
IntersectionResult intersect_projectors_vonneumann(const Matrix& pa,
                                                   const Matrix& pb,
                                                   int max_iter = 5000,
                                                   double tol = 1e-10);

}  // namespace projda
