#pragma once

#include "projda/core.hpp"
#include "projda/observation.hpp"

#include <memory>

namespace projda {

enum class ModelKind { StiffLinear, Lorenz96 };

struct ModelSpec {
  ModelKind kind = ModelKind::Lorenz96;
  int dim = 40;
  double forcing = 8.0;
  double obs_interval = 0.05;
  /// RK4 steps per observation interval; ignored for the linear model.
  int substeps = 5;
  /// Model noise covariance is model_noise_var * I, applied once per
  /// observation interval.
  double model_noise_var = 0.0;

  void validate() const;
};

/// Linear flow u -> e^{A dt} u. For systems from build_stiff_linear,
/// A = Q D Q^T is normal with one slow rotating 2-plane.
struct StiffLinearSystem {
  Matrix a;
  Matrix propagator;
  /// First two columns of Q, an orthonormal basis of the slow eigenspace.
  Matrix slow_basis;
  Matrix orthogonal;
  Matrix block_diagonal;
  double slow_rate = 0.0;
  Vector fast_rates;
};

/// A forecast model: the spec plus the precomputed linear system when the
/// kind is StiffLinear. Cheap to copy; the linear system is shared.
struct Model {
  ModelSpec spec;
  std::shared_ptr<const StiffLinearSystem> linear;

  static Model lorenz96(const ModelSpec& spec);
  static Model stiff_linear(const ModelSpec& spec, StiffLinearSystem system);
  /// Generic linear model u -> propagator * u (no slow-basis diagnostics).
  static Model linear_map(const Matrix& propagator, double model_noise_var,
                          double obs_interval = 1.0);

  int dim() const { return spec.dim; }
};

/// Lorenz-96 tendency du_i/dt = (u_{i+1} - u_{i-2}) u_{i-1} - u_i + F with
/// cyclic indices.
void lorenz96_rhs(const double* u, double* dudt, int n, double forcing);

/// Jacobian of the Lorenz-96 tendency.
Matrix lorenz96_rhs_jacobian(const Vector& u);

/// F_n(u): one observation interval of the deterministic flow.
Vector step_deterministic(const Model& model, const Vector& u);

/// Applies step_deterministic to every column of `states` in place.
void step_deterministic_columns(const Model& model, Matrix& states);

/// F_n(u) + sigma_n, sigma_n ~ N(0, model_noise_var I).
Vector step_stochastic(const Model& model, const Vector& u, RandomStream& rng);

void step_stochastic_columns(const Model& model, Matrix& states,
                             RandomStream& rng);

/// 1e-6 * max(1, ||u||)
double default_fd_epsilon(const Vector& u);

/// Column j is (F(u + eps V_j) - F(u)) / eps.
Matrix tangent_apply(const Model& model, const Vector& u, const Matrix& v,
                     double eps);

/// Finite-difference Jacobian of the flow map (tangent_apply with V = I).
Matrix flow_jacobian(const Model& model, const Vector& u, double eps);

/// Random normal A with a slow pair Re(lambda) in (0.01, 0.04), Im = +-1 and
/// dim-2 fast real eigenvalues in [-200, -100]; propagator e^{A dt}.
StiffLinearSystem build_stiff_linear(int dim, double dt, RandomStream& rng);

/// Truth trajectory and observations. truth.col(0) is u0; obs.col(k)
/// observes truth.col(k + 1).
struct TwinData {
  Matrix truth;
  Matrix observations;
  /// States visited before u0 (discarded transient), oldest first.
  Matrix prehistory;

  int steps() const { return static_cast<int>(observations.cols()); }
};

TwinData generate_truth_and_observations(const Model& model,
                                         const ObservationModel& obs,
                                         const Vector& u0, int n_steps,
                                         RandomStream& rng);

}  // namespace projda
