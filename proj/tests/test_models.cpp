#include "projda/models.hpp"

#include "projda/linalg.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <complex>

using namespace projda;

namespace {

ModelSpec l96_spec(double dt, int substeps, double noise = 0.0, int dim = 40) {
  ModelSpec s;
  s.kind = ModelKind::Lorenz96;
  s.dim = dim;
  s.forcing = 8.0;
  s.obs_interval = dt;
  s.substeps = substeps;
  s.model_noise_var = noise;
  return s;
}

Model stiff_model(int dim, double dt, double noise, std::uint64_t seed) {
  RandomStream rng(seed);
  ModelSpec s;
  s.kind = ModelKind::StiffLinear;
  s.dim = dim;
  s.obs_interval = dt;
  s.model_noise_var = noise;
  return Model::stiff_linear(s, build_stiff_linear(dim, dt, rng));
}

// States on the attractor, spun up from the fixed point.
std::vector<Vector> attractor_states(int count, std::uint64_t seed) {
  const Model m = Model::lorenz96(l96_spec(0.05, 5));
  RandomStream rng(seed);
  Vector u = Vector::Constant(40, 8.0) + rng.normal_vector(40, 0.5);
  for (int k = 0; k < 200; ++k) u = step_deterministic(m, u);
  std::vector<Vector> out;
  for (int k = 0; k < count; ++k) {
    for (int j = 0; j < 4; ++j) u = step_deterministic(m, u);
    out.push_back(u);
  }
  return out;
}

}  // namespace

TEST_CASE("Lorenz-96 fixed point F*1 is preserved") {
  const Model m = Model::lorenz96(l96_spec(0.05, 5));
  const Vector u = Vector::Constant(40, 8.0);
  CHECK(max_abs(step_deterministic(m, u) - u) == 0.0);
}

// The two bound checks below use h = 0.01 exactly; they run as their own ctest
// entry so the rest of the file is reported separately.
TEST_CASE("rk4 bound: step matches an adaptive integrator near the fixed point") {
  const Model m = Model::lorenz96(l96_spec(0.05, 5));
  Vector u = Vector::Constant(40, 8.0);
  u(0) += 0.01;
  const Vector ref = oracle::lorenz96_adaptive(u, 0.05, 8.0);
  CHECK(max_abs(step_deterministic(m, u) - ref) <= 1e-8);
}

TEST_CASE("rk4 bound: step matches an adaptive integrator on 100 attractor states") {
  const Model m = Model::lorenz96(l96_spec(0.05, 5));
  double worst = 0.0;
  for (const Vector& u : attractor_states(100, 21)) {
    const Vector ref = oracle::lorenz96_adaptive(u, 0.05, 8.0);
    worst = std::max(worst, max_abs(step_deterministic(m, u) - ref));
  }
  MESSAGE("worst RK4 deviation " << worst);
  CHECK(worst <= 1e-8);
}

TEST_CASE("Lorenz-96 RK4 converges at fourth order against the adaptive oracle") {
  Vector u = Vector::Constant(40, 8.0);
  u(0) += 0.01;
  const Vector ref = oracle::lorenz96_adaptive(u, 0.05, 8.0);
  double prev = 0.0;
  for (int sub : {5, 10, 20}) {
    const double err = max_abs(step_deterministic(Model::lorenz96(l96_spec(0.05, sub)), u) - ref);
    if (prev > 0.0) CHECK(prev / err == doctest::Approx(16.0).epsilon(0.1));
    prev = err;
  }
  // Fine steps reach the oracle's own accuracy.
  CHECK(max_abs(step_deterministic(Model::lorenz96(l96_spec(0.05, 50)), u) - ref) <= 1e-10);
}

TEST_CASE("Lorenz-96 finite-difference tendency Jacobian matches the analytic one") {
  const Vector u = Vector::Constant(40, 8.0);
  const Matrix jac = lorenz96_rhs_jacobian(u);
  Vector f0(40), f1(40);
  lorenz96_rhs(u.data(), f0.data(), 40, 8.0);
  Matrix fd(40, 40);
  const double eps = 1e-7;
  for (int j = 0; j < 40; ++j) {
    Vector up = u;
    up(j) += eps;
    lorenz96_rhs(up.data(), f1.data(), 40, 8.0);
    fd.col(j) = (f1 - f0) / eps;
  }
  CHECK(max_abs(fd - jac) < 1e-5);
  for (int i = 0; i < 40; ++i) CHECK(jac(i, i) == -1.0);
  // Each row couples only i-2, i-1, i and i+1.
  for (int i = 0; i < 40; ++i)
    for (int j = 0; j < 40; ++j) {
      const int d = (j - i + 40) % 40;
      if (d != 0 && d != 1 && d != 38 && d != 39) CHECK(jac(i, j) == 0.0);
    }
}

TEST_CASE("flow Jacobian at the fixed point equals exp(J dt)") {
  const Model m = Model::lorenz96(l96_spec(0.05, 5));
  const Vector u = Vector::Constant(40, 8.0);
  const Matrix expected = linalg::expm(0.05 * lorenz96_rhs_jacobian(u));
  CHECK(max_abs(flow_jacobian(m, u, 1e-6) - expected) < 1e-5);
}

TEST_CASE("tangent_apply on Lorenz-96 agrees with central differences") {
  const Model m = Model::lorenz96(l96_spec(0.05, 5));
  RandomStream rng(22);
  const Vector u = attractor_states(1, 23).front();
  const Matrix v = rng.normal_matrix(40, 5);
  const double eps = 1e-6;
  const Matrix fwd = tangent_apply(m, u, v, eps);
  const double h = eps / 10.0;
  Matrix central(40, 5);
  for (int j = 0; j < 5; ++j)
    central.col(j) = (step_deterministic(m, u + h * v.col(j)) -
                      step_deterministic(m, u - h * v.col(j))) /
                     (2.0 * h);
  CHECK((fwd - central).norm() / central.norm() <= 1e-4);
  CHECK(max_abs(tangent_apply(m, u, Matrix::Zero(40, 3), eps)) == 0.0);
}

TEST_CASE("stiff linear system has the constructed spectrum") {
  RandomStream rng(31);
  const StiffLinearSystem sys = build_stiff_linear(100, 0.1, rng);
  Eigen::EigenSolver<Matrix> eig(sys.a, false);
  int slow = 0, fast = 0;
  for (int i = 0; i < 100; ++i) {
    const std::complex<double> l = eig.eigenvalues()(i);
    if (l.real() > 0.0 && l.real() < 0.04) {
      ++slow;
      CHECK(std::abs(std::abs(l.imag()) - 1.0) < 1e-8);
    } else if (l.real() <= -100.0 + 1e-8) {
      ++fast;
    }
  }
  CHECK(slow == 2);
  CHECK(fast == 98);
  CHECK(max_abs(sys.orthogonal.transpose() * sys.orthogonal - Matrix::Identity(100, 100)) <=
        1e-10);
  CHECK(sys.slow_rate > 0.01);
  CHECK(sys.slow_rate < 0.04);
}

TEST_CASE("stiff propagator: squaring check, slow growth and fast contraction") {
  RandomStream rng(32);
  const double dt = 0.1;
  const StiffLinearSystem sys = build_stiff_linear(100, dt, rng);
  const Matrix half = linalg::expm(sys.a * (dt / 2));
  CHECK((half * half - sys.propagator).norm() / sys.propagator.norm() < 1e-10);

  for (int j = 0; j < 2; ++j) {
    const Vector v = sys.slow_basis.col(j);
    const double g = (sys.propagator * v).norm();
    CHECK(g >= std::exp(0.01 * dt) * (1 - 1e-6));
    CHECK(g <= std::exp(0.04 * dt) * (1 + 1e-6));
  }
  RandomStream vr(33);
  const Matrix p = sys.slow_basis * sys.slow_basis.transpose();
  for (int k = 0; k < 20; ++k) {
    Vector v = vr.normal_vector(100);
    v -= p * v;
    v.normalize();
    CHECK((sys.propagator * v).norm() <= std::exp(-100.0 * dt) + 1e-6);
  }
}

TEST_CASE("stiff linear step: zero maps to zero and tangent action is exact") {
  const Model m = stiff_model(100, 0.1, 0.0, 34);
  CHECK(max_abs(step_deterministic(m, Vector::Zero(100))) == 0.0);
  RandomStream rng(35);
  const Vector u = rng.normal_vector(100);
  const Matrix v = rng.normal_matrix(100, 3);
  const Matrix exact = m.linear->propagator * v;
  for (double eps : {1e-8, 1e-6, 1e-4}) {
    const Matrix fd = tangent_apply(m, u, v, eps);
    CHECK((fd - exact).norm() / exact.norm() <= 1e-6);
  }
}

TEST_CASE("step_stochastic: zero noise, cloned streams, noise variance") {
  const Model quiet = Model::lorenz96(l96_spec(0.05, 5, 0.0));
  RandomStream rng(41);
  const Vector u = attractor_states(1, 42).front();
  CHECK(max_abs(step_stochastic(quiet, u, rng) - step_deterministic(quiet, u)) == 0.0);

  const Model noisy = Model::lorenz96(l96_spec(0.05, 5, 0.01));
  RandomStream a(43);
  RandomStream b = a;
  CHECK(max_abs(step_stochastic(noisy, u, a) - step_stochastic(noisy, u, b)) == 0.0);

  const int samples = 100000;
  Matrix states = u.replicate(1, samples);
  RandomStream c(44);
  step_stochastic_columns(noisy, states, c);
  const Vector det = step_deterministic(noisy, u);
  const Matrix diff = states.colwise() - det;
  const Vector var = diff.array().square().rowwise().sum() / (samples - 1.0);
  for (int i = 0; i < 40; ++i) CHECK(std::abs(var(i) / 0.01 - 1.0) < 0.05);
}

TEST_CASE("generate_truth_and_observations") {
  SUBCASE("R = 0 and H = I reproduce the truth") {
    const Model m = Model::lorenz96(l96_spec(0.05, 5, 0.01));
    const ObservationModel obs(Matrix::Identity(40, 40), Matrix::Zero(40, 40));
    RandomStream rng(51);
    const TwinData twin = generate_truth_and_observations(
        m, obs, Vector::Constant(40, 8.0) + rng.normal_vector(40), 20, rng);
    CHECK(twin.steps() == 20);
    CHECK(max_abs(twin.observations - twin.truth.rightCols(20)) == 0.0);
  }
  SUBCASE("every second variable gives 20 observations") {
    std::vector<int> idx;
    for (int i = 0; i < 40; i += 2) idx.push_back(i);
    const auto obs = ObservationModel::selector(40, idx, 0.01);
    const Model m = Model::lorenz96(l96_spec(0.05, 5, 0.01));
    RandomStream rng(52);
    const TwinData twin =
        generate_truth_and_observations(m, obs, Vector::Constant(40, 8.0), 5, rng);
    CHECK(twin.observations.rows() == 20);
  }
  SUBCASE("observation error covariance matches R") {
    const Model m = Model::linear_map(0.9 * Matrix::Identity(3, 3), 0.1);
    Matrix r(2, 2);
    r << 0.04, 0.01, 0.01, 0.09;
    Matrix h(2, 3);
    h << 1, 0, 0, 0, 1, 1;
    const ObservationModel obs(h, r);
    RandomStream rng(53);
    const int n = 100000;
    const TwinData twin = generate_truth_and_observations(m, obs, Vector::Zero(3), n, rng);
    const Matrix err = twin.observations - h * twin.truth.rightCols(n);
    const Matrix cov = err * err.transpose() / static_cast<double>(n);
    CHECK((cov - r).norm() / r.norm() < 0.05);
  }
  SUBCASE("identical seeds give bit-identical twins") {
    const Model m = Model::lorenz96(l96_spec(0.05, 5, 0.01));
    const auto obs = ObservationModel::selector(40, {0, 5, 9}, 0.01);
    RandomStream a(54), b(54);
    const TwinData ta = generate_truth_and_observations(m, obs, Vector::Constant(40, 8.0), 30, a);
    const TwinData tb = generate_truth_and_observations(m, obs, Vector::Constant(40, 8.0), 30, b);
    CHECK(ta.truth == tb.truth);
    CHECK(ta.observations == tb.observations);
  }
}

TEST_CASE("blow-up is reported as an integration error") {
  const Model m = Model::lorenz96(l96_spec(5.0, 1));
  Vector u = Vector::Constant(40, 8.0);
  for (int i = 0; i < 40; ++i) u(i) = 1e100 * (i % 7);
  try {
    step_deterministic(m, u);
    FAIL("expected IntegrationBlowup");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::IntegrationBlowup);
  }
  const auto obs = ObservationModel::selector(40, {0}, 0.01);
  RandomStream rng(55);
  try {
    generate_truth_and_observations(m, obs, u, 3, rng);
    FAIL("expected IntegrationBlowup");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::IntegrationBlowup);
    CHECK(std::string(e.what()).find("step 1") != std::string::npos);
  }
}

TEST_CASE("ModelSpec validation") {
  ModelSpec s = l96_spec(0.05, 5);
  s.substeps = 0;
  CHECK_THROWS_AS(s.validate(), Error);
  s = l96_spec(-0.1, 5);
  CHECK_THROWS_AS(s.validate(), Error);
  s = l96_spec(0.05, 5, -1.0);
  CHECK_THROWS_AS(s.validate(), Error);
}
