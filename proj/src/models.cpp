#include "projda/models.hpp"

#include "projda/linalg.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace projda {

void ModelSpec::validate() const {
  require(dim >= 1, ErrorCode::Config, "model.dim must be >= 1");
  require(substeps >= 1, ErrorCode::Config, "model.substeps must be >= 1");
  require(obs_interval > 0.0 && std::isfinite(obs_interval), ErrorCode::Config,
          "model.obs_interval must be > 0");
  require(model_noise_var >= 0.0 && std::isfinite(model_noise_var),
          ErrorCode::Config, "model.model_noise_var must be >= 0");
  if (kind == ModelKind::Lorenz96)
    require(dim >= 4, ErrorCode::Config, "Lorenz-96 needs at least 4 variables");
}

Model Model::lorenz96(const ModelSpec& spec) {
  ModelSpec s = spec;
  s.kind = ModelKind::Lorenz96;
  s.validate();
  return Model{s, nullptr};
}

Model Model::stiff_linear(const ModelSpec& spec, StiffLinearSystem system) {
  ModelSpec s = spec;
  s.kind = ModelKind::StiffLinear;
  s.validate();
  require(system.propagator.rows() == s.dim && system.propagator.cols() == s.dim,
          ErrorCode::Dimension, "propagator does not match model.dim");
  return Model{s, std::make_shared<const StiffLinearSystem>(std::move(system))};
}

Model Model::linear_map(const Matrix& propagator, double model_noise_var,
                        double obs_interval) {
  require(propagator.rows() == propagator.cols(), ErrorCode::Dimension,
          "propagator must be square");
  ModelSpec s;
  s.kind = ModelKind::StiffLinear;
  s.dim = static_cast<int>(propagator.rows());
  s.obs_interval = obs_interval;
  s.substeps = 1;
  s.model_noise_var = model_noise_var;
  StiffLinearSystem sys;
  sys.propagator = propagator;
  return stiff_linear(s, std::move(sys));
}

void lorenz96_rhs(const double* u, double* dudt, int n, double forcing) {
  // Interior indices avoid the modulo; the three wrap-around entries are
  // handled explicitly.
  dudt[0] = (u[1] - u[n - 2]) * u[n - 1] - u[0] + forcing;
  dudt[1] = (u[2] - u[n - 1]) * u[0] - u[1] + forcing;
  for (int i = 2; i < n - 1; ++i)
    dudt[i] = (u[i + 1] - u[i - 2]) * u[i - 1] - u[i] + forcing;
  dudt[n - 1] = (u[0] - u[n - 3]) * u[n - 2] - u[n - 1] + forcing;
}

Matrix lorenz96_rhs_jacobian(const Vector& u) {
  const int n = static_cast<int>(u.size());
  auto w = [n](int i) { return ((i % n) + n) % n; };
  Matrix jac = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    jac(i, i) = -1.0;
    jac(i, w(i + 1)) += u(w(i - 1));
    jac(i, w(i - 1)) += u(w(i + 1)) - u(w(i - 2));
    jac(i, w(i - 2)) += -u(w(i - 1));
  }
  return jac;
}

namespace {

void rk4_lorenz96(double* u, int n, double forcing, double h, int steps,
                  std::vector<double>& work) {
  work.resize(5 * static_cast<std::size_t>(n));
  double* k1 = work.data();
  double* k2 = k1 + n;
  double* k3 = k2 + n;
  double* k4 = k3 + n;
  double* tmp = k4 + n;
  for (int s = 0; s < steps; ++s) {
    lorenz96_rhs(u, k1, n, forcing);
    for (int i = 0; i < n; ++i) tmp[i] = u[i] + 0.5 * h * k1[i];
    lorenz96_rhs(tmp, k2, n, forcing);
    for (int i = 0; i < n; ++i) tmp[i] = u[i] + 0.5 * h * k2[i];
    lorenz96_rhs(tmp, k3, n, forcing);
    for (int i = 0; i < n; ++i) tmp[i] = u[i] + h * k3[i];
    lorenz96_rhs(tmp, k4, n, forcing);
    for (int i = 0; i < n; ++i)
      u[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  }
}

void check_finite(const Matrix& states) {
  if (!states.allFinite())
    throw Error(ErrorCode::IntegrationBlowup,
                "model integration produced a non-finite state");
}

void check_dim(const Model& model, Eigen::Index rows) {
  require(rows == model.dim(), ErrorCode::Dimension,
          "state has length " + std::to_string(rows) + ", model dimension is " +
              std::to_string(model.dim()));
}

}  // namespace

void step_deterministic_columns(const Model& model, Matrix& states) {
  check_dim(model, states.rows());
  switch (model.spec.kind) {
    case ModelKind::StiffLinear: {
      require(model.linear != nullptr, ErrorCode::Internal,
              "linear model without a propagator");
      states = model.linear->propagator * states;
      break;
    }
    case ModelKind::Lorenz96: {
      const int n = model.dim();
      const double h = model.spec.obs_interval / model.spec.substeps;
      std::vector<double> work;
      for (Eigen::Index j = 0; j < states.cols(); ++j)
        rk4_lorenz96(states.col(j).data(), n, model.spec.forcing, h,
                     model.spec.substeps, work);
      break;
    }
  }
  check_finite(states);
}

Vector step_deterministic(const Model& model, const Vector& u) {
  Matrix m = u;
  step_deterministic_columns(model, m);
  return m.col(0);
}

void step_stochastic_columns(const Model& model, Matrix& states,
                             RandomStream& rng) {
  step_deterministic_columns(model, states);
  const double var = model.spec.model_noise_var;
  if (var > 0.0) {
    const double sd = std::sqrt(var);
    for (Eigen::Index j = 0; j < states.cols(); ++j)
      for (Eigen::Index i = 0; i < states.rows(); ++i)
        states(i, j) += sd * rng.normal();
  }
}

Vector step_stochastic(const Model& model, const Vector& u, RandomStream& rng) {
  Matrix m = u;
  step_stochastic_columns(model, m, rng);
  return m.col(0);
}

double default_fd_epsilon(const Vector& u) {
  return 1e-6 * std::max(1.0, u.norm());
}

Matrix tangent_apply(const Model& model, const Vector& u, const Matrix& v,
                     double eps) {
  require(eps > 0.0, ErrorCode::Config, "finite-difference epsilon must be > 0");
  check_dim(model, u.size());
  check_dim(model, v.rows());
  require(v.allFinite(), ErrorCode::Dimension, "tangent directions not finite");
  Matrix shifted(u.size(), v.cols() + 1);
  shifted.col(0) = u;
  shifted.rightCols(v.cols()) = (eps * v).colwise() + u;
  step_deterministic_columns(model, shifted);
  return (shifted.rightCols(v.cols()).colwise() - shifted.col(0)) / eps;
}

Matrix flow_jacobian(const Model& model, const Vector& u, double eps) {
  return tangent_apply(model, u, Matrix::Identity(model.dim(), model.dim()), eps);
}

StiffLinearSystem build_stiff_linear(int dim, double dt, RandomStream& rng) {
  require(dim >= 3, ErrorCode::Config, "stiff linear system needs dim >= 3");
  require(dt > 0.0, ErrorCode::Config, "time step must be > 0");
  StiffLinearSystem sys;
  sys.orthogonal = linalg::random_orthogonal(dim, rng);
  sys.slow_rate = 0.01 + 0.03 * rng.uniform();
  if (sys.slow_rate <= 0.01) sys.slow_rate = 0.025;
  sys.fast_rates.resize(dim - 2);
  for (int i = 0; i < dim - 2; ++i) sys.fast_rates(i) = -100.0 - 100.0 * rng.uniform();

  Matrix d = Matrix::Zero(dim, dim);
  d(0, 0) = sys.slow_rate;
  d(0, 1) = 1.0;
  d(1, 0) = -1.0;
  d(1, 1) = sys.slow_rate;
  for (int i = 0; i < dim - 2; ++i) d(i + 2, i + 2) = sys.fast_rates(i);
  sys.block_diagonal = d;

  sys.a = sys.orthogonal * d * sys.orthogonal.transpose();
  sys.propagator = linalg::expm(sys.a * dt);
  sys.slow_basis = sys.orthogonal.leftCols(2);
  return sys;
}

TwinData generate_truth_and_observations(const Model& model,
                                         const ObservationModel& obs,
                                         const Vector& u0, int n_steps,
                                         RandomStream& rng) {
  require(n_steps >= 1, ErrorCode::Config, "n_steps must be >= 1");
  check_dim(model, u0.size());
  require(obs.state_dim() == model.dim(), ErrorCode::Dimension,
          "observation operator does not match model dimension");
  TwinData data;
  data.truth.resize(model.dim(), n_steps + 1);
  data.observations.resize(obs.obs_dim(), n_steps);
  data.truth.col(0) = u0;
  Vector u = u0;
  for (int n = 0; n < n_steps; ++n) {
    try {
      u = step_stochastic(model, u, rng);
    } catch (const Error& e) {
      throw Error(e.code(), std::string(e.what()) + " (truth step " +
                                std::to_string(n + 1) + ")");
    }
    data.truth.col(n + 1) = u;
    const Vector noise = rng.normal_vector(obs.obs_dim());
    data.observations.col(n) = obs.h() * u + obs.noise_factor() * noise;
  }
  return data;
}

}  // namespace projda
