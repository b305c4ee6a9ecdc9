#include "projda/filters.hpp"

#include "projda/linalg.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <utility>

namespace projda {

namespace {

constexpr std::array<std::pair<FilterKind, std::string_view>, 10> kKindNames{{
    {FilterKind::BootstrapPF, "bootstrap_pf"},
    {FilterKind::OpPF, "op_pf"},
    {FilterKind::ProjPF, "proj_pf"},
    {FilterKind::ProjOpPF, "proj_op_pf"},
    {FilterKind::OpPfProjResamp, "op_pf_proj_resamp"},
    {FilterKind::KF, "kf"},
    {FilterKind::EKF, "ekf"},
    {FilterKind::EkfAus, "ekf_aus"},
    {FilterKind::ETKF, "etkf"},
    {FilterKind::ProjETKF, "proj_etkf"},
}};

}  // namespace

const char* to_string(FilterKind kind) {
  for (const auto& [k, name] : kKindNames)
    if (k == kind) return name.data();
  return "unknown";
}

std::optional<FilterKind> filter_kind_from_string(std::string_view name) {
  for (const auto& [k, n] : kKindNames)
    if (n == name) return k;
  return std::nullopt;
}

bool is_particle_filter(FilterKind kind) {
  switch (kind) {
    case FilterKind::BootstrapPF:
    case FilterKind::OpPF:
    case FilterKind::ProjPF:
    case FilterKind::ProjOpPF:
    case FilterKind::OpPfProjResamp:
      return true;
    default:
      return false;
  }
}

bool is_ensemble_filter(FilterKind kind) {
  return is_particle_filter(kind) || kind == FilterKind::ETKF ||
         kind == FilterKind::ProjETKF;
}

bool is_gaussian_filter(FilterKind kind) { return !is_ensemble_filter(kind); }

bool needs_tracker(FilterKind kind) {
  switch (kind) {
    case FilterKind::ProjPF:
    case FilterKind::ProjOpPF:
    case FilterKind::OpPfProjResamp:
    case FilterKind::EkfAus:
    case FilterKind::ProjETKF:
      return true;
    default:
      return false;
  }
}

bool uses_alpha(FilterKind kind) {
  return kind == FilterKind::ProjOpPF || kind == FilterKind::OpPfProjResamp;
}

// --- Ensemble ----------------------------------------------------------------

Ensemble Ensemble::uniform(Matrix particles) {
  Ensemble e;
  e.particles = std::move(particles);
  e.set_uniform();
  return e;
}

void Ensemble::set_uniform() {
  const auto l = particles.cols();
  weights = Vector::Constant(l, 1.0 / static_cast<double>(l));
  log_weights = Vector::Constant(l, -std::log(static_cast<double>(l)));
}

bool Ensemble::normalize() {
  double top = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < log_weights.size(); ++i)
    if (log_weights(i) > top) top = log_weights(i);
  if (!std::isfinite(top)) return false;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < log_weights.size(); ++i)
    sum += std::isnan(log_weights(i)) ? 0.0 : std::exp(log_weights(i) - top);
  const double log_norm = top + std::log(sum);
  for (Eigen::Index i = 0; i < log_weights.size(); ++i) {
    if (std::isnan(log_weights(i)))
      log_weights(i) = -std::numeric_limits<double>::infinity();
    log_weights(i) -= log_norm;
  }
  // scalar exp: the vectorized one clamps and turns -inf into a denormal
  weights = log_weights.unaryExpr([](double v) { return std::exp(v); });
  weights /= weights.sum();
  return true;
}

Vector Ensemble::mean() const { return particles * weights; }

GaussianBelief GaussianBelief::make(Vector mean, Matrix cov) {
  require(cov.rows() == mean.size() && cov.cols() == mean.size(),
          ErrorCode::Dimension, "covariance does not match mean");
  Matrix sym = linalg::symmetrize(cov);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
  if (eig.info() == Eigen::Success && eig.eigenvalues().minCoeff() < 0.0) {
    const Vector clipped = eig.eigenvalues().cwiseMax(0.0);
    sym = eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose();
    sym = linalg::symmetrize(sym);
  }
  return GaussianBelief{std::move(mean), std::move(sym)};
}

// --- Resampling ----------------------------------------------------------------

double ess(const Vector& weights) { return 1.0 / weights.squaredNorm(); }

std::vector<int> systematic_indices(const Vector& weights, double u) {
  const int l = static_cast<int>(weights.size());
  std::vector<int> idx(l);
  int i = 0;
  double cumulative = weights(0);
  for (int k = 0; k < l; ++k) {
    const double pos = (u + k) / l;
    while (pos >= cumulative && i < l - 1) cumulative += weights(++i);
    idx[k] = i;
  }
  return idx;
}

Ensemble systematic_resample(const Ensemble& ens, RandomStream& rng) {
  const auto idx = systematic_indices(ens.weights, rng.uniform());
  Matrix out(ens.dim(), ens.size());
  for (int k = 0; k < ens.size(); ++k) out.col(k) = ens.particles.col(idx[k]);
  return Ensemble::uniform(std::move(out));
}

Matrix proj_resample_noise(int n, int l, double omega, double alpha,
                           const SubspaceBasis& basis, RandomStream& rng) {
  require(omega >= 0.0, ErrorCode::Config, "resampling noise must be >= 0");
  require(alpha >= 0.0 && alpha <= 1.0, ErrorCode::Config, "alpha must lie in [0, 1]");
  require(basis.dim() == n, ErrorCode::Dimension, "basis does not match state");
  const Matrix z = rng.normal_matrix(n, l, omega);
  const Matrix& u = basis.u();
  return alpha * (u * (u.transpose() * z)) + (1.0 - alpha) * z;
}

namespace {

StepOutcome finish_pf_step(Ensemble& ens, const ResampleSettings& settings,
                           const SubspaceBasis* basis, RandomStream& rng) {
  StepOutcome out;
  if (!ens.normalize()) {
    out.weight_collapse = true;
    ens.set_uniform();
  }
  out.ess = ess(ens.weights);
  out.mean = ens.mean();
  const double l = static_cast<double>(ens.size());
  if (out.weight_collapse || out.ess < settings.threshold * l) {
    ens = systematic_resample(ens, rng);
    out.resampled = true;
    if (settings.omega > 0.0) {
      if (basis != nullptr)
        ens.particles += proj_resample_noise(ens.dim(), ens.size(), settings.omega,
                                             settings.alpha, *basis, rng);
      else
        ens.particles += rng.normal_matrix(ens.dim(), ens.size(), settings.omega);
    }
  }
  return out;
}

Vector gaussian_log_increments(const Matrix& h, const Matrix& whitener,
                               const Vector& y, const Matrix& states) {
  Matrix innov = -(h * states);
  innov.colwise() += y;
  return -0.5 * (whitener * innov).colwise().squaredNorm().transpose();
}

void check_ensemble(const Ensemble& ens, const Model& model) {
  require(ens.size() >= 2, ErrorCode::Config, "ensemble needs at least 2 members");
  require(ens.dim() == model.dim(), ErrorCode::Dimension,
          "ensemble dimension does not match the model");
  require(ens.log_weights.size() == ens.size() && ens.weights.size() == ens.size(),
          ErrorCode::Dimension, "weights do not match the particle count");
}

}  // namespace

// --- Particle filters -----------------------------------------------------------

StepOutcome pf_bootstrap_step(Ensemble& ens, const Model& model,
                              const ObservationModel& obs, const Vector& y,
                              const ResampleSettings& settings, RandomStream& rng) {
  check_ensemble(ens, model);
  step_stochastic_columns(model, ens.particles, rng);
  ens.log_weights +=
      gaussian_log_increments(obs.h(), obs.r_inverse().whitener, y, ens.particles);
  ResampleSettings plain = settings;
  plain.alpha = 0.0;
  return finish_pf_step(ens, plain, nullptr, rng);
}

StepOutcome pf_proj_step(Ensemble& ens, const Model& model,
                         const ProjectedObservationModel& pm, const Vector& yq,
                         const ResampleSettings& settings, RandomStream& rng) {
  check_ensemble(ens, model);
  step_stochastic_columns(model, ens.particles, rng);
  ens.log_weights += projected_log_likelihood_columns(pm, yq, ens.particles);
  ResampleSettings plain = settings;
  plain.alpha = 0.0;
  return finish_pf_step(ens, plain, nullptr, rng);
}

OptimalProposal::OptimalProposal(const Model& model, const ObservationModel& obs)
    : sigma2_(model.spec.model_noise_var) {
  require(sigma2_ > 0.0, ErrorCode::Config,
          "optimal proposal undefined without model noise");
  require(obs.state_dim() == model.dim(), ErrorCode::Dimension,
          "observation operator does not match the model");
  const Matrix& h = obs.h();
  const Eigen::Index n = h.cols();
  innov_cov_ = linalg::symmetrize(sigma2_ * h * h.transpose() + obs.r());
  Eigen::LLT<Matrix> llt(innov_cov_);
  require(llt.info() == Eigen::Success, ErrorCode::IllConditioned,
          "H Sigma H^T + R is not positive definite");
  // Sigma H^T (H Sigma H^T + R)^{-1}
  gain_ = llt.solve(sigma2_ * h).transpose();
  cov_ = linalg::symmetrize(sigma2_ * (Matrix::Identity(n, n) - gain_ * h));
  Eigen::LLT<Matrix> cov_llt(cov_);
  if (cov_llt.info() == Eigen::Success)
    cov_factor_ = cov_llt.matrixL();
  else
    cov_factor_ = linalg::symmetric_sqrt(cov_);
  const Eigen::Index m = h.rows();
  innov_whitener_ = llt.matrixL().solve(Matrix::Identity(m, m));
}

Vector OptimalProposal::log_weight_increments(const ObservationModel& obs,
                                              const Vector& y,
                                              const Matrix& forecast) const {
  return gaussian_log_increments(obs.h(), innov_whitener_, y, forecast);
}

Vector projected_op_log_weight_increments(const ProjectedObservationModel& pm,
                                          double model_noise_var,
                                          const Vector& yq,
                                          const Matrix& forecast) {
  const Matrix s = model_noise_var * pm.hq * pm.hq.transpose() + pm.rq;
  const auto inv = linalg::symmetric_pinv(s);
  return gaussian_log_increments(pm.hq, inv.whitener, yq, forecast);
}

namespace {

// Returns the deterministic forecast and overwrites the particles with draws
// from the optimal proposal N(m_i, Sigma_p).
Matrix optimal_proposal_move(Ensemble& ens, const Model& model,
                             const OptimalProposal& proposal,
                             const ObservationModel& obs, const Vector& y,
                             RandomStream& rng) {
  Matrix forecast = ens.particles;
  step_deterministic_columns(model, forecast);
  Matrix innov = -(obs.h() * forecast);
  innov.colwise() += y;
  const Matrix z = rng.normal_matrix(ens.dim(), ens.size());
  ens.particles = forecast + proposal.gain() * innov + proposal.covariance_factor() * z;
  return forecast;
}

}  // namespace

StepOutcome op_pf_step(Ensemble& ens, const Model& model,
                       const OptimalProposal& proposal, const ObservationModel& obs,
                       const Vector& y, const ResampleSettings& settings,
                       RandomStream& rng, const SubspaceBasis* resample_basis) {
  check_ensemble(ens, model);
  const Matrix forecast = optimal_proposal_move(ens, model, proposal, obs, y, rng);
  ens.log_weights += proposal.log_weight_increments(obs, y, forecast);
  ResampleSettings used = settings;
  if (resample_basis == nullptr) used.alpha = 0.0;
  return finish_pf_step(ens, used, resample_basis, rng);
}

StepOutcome proj_op_pf_step(Ensemble& ens, const Model& model,
                            const OptimalProposal& proposal,
                            const ObservationModel& obs, const Vector& y,
                            const ProjectedObservationModel& pm, const Vector& yq,
                            const SubspaceBasis& basis,
                            const ResampleSettings& settings, RandomStream& rng) {
  check_ensemble(ens, model);
  const Matrix forecast = optimal_proposal_move(ens, model, proposal, obs, y, rng);
  ens.log_weights += projected_op_log_weight_increments(
      pm, proposal.model_noise_var(), yq, forecast);
  return finish_pf_step(ens, settings, &basis, rng);
}

// --- Kalman family --------------------------------------------------------------

Matrix kalman_gain(const Matrix& pf, const Matrix& h, const Matrix& r) {
  const Matrix s = linalg::symmetrize(h * pf * h.transpose() + r);
  Eigen::LLT<Matrix> llt(s);
  if (llt.info() != Eigen::Success)
    throw Error(ErrorCode::IllConditioned,
                "innovation covariance is not positive definite");
  return llt.solve(h * pf.transpose()).transpose();
}

GaussianBelief kf_forecast(const GaussianBelief& belief, const Matrix& a,
                           const Matrix& sigma) {
  require(a.cols() == belief.mean.size(), ErrorCode::Dimension,
          "propagator does not match the belief");
  return GaussianBelief{a * belief.mean,
                        linalg::symmetrize(a * belief.cov * a.transpose() + sigma)};
}

KalmanAnalysis kf_analysis(const GaussianBelief& forecast, const Matrix& h,
                           const Matrix& r, const Vector& y) {
  require(h.cols() == forecast.mean.size() && h.rows() == y.size(),
          ErrorCode::Dimension, "observation does not match the belief");
  KalmanAnalysis out;
  out.gain = kalman_gain(forecast.cov, h, r);
  const Eigen::Index n = forecast.mean.size();
  Vector mean = forecast.mean + out.gain * (y - h * forecast.mean);
  Matrix cov = (Matrix::Identity(n, n) - out.gain * h) * forecast.cov;
  out.belief = GaussianBelief::make(std::move(mean), std::move(cov));
  return out;
}

GaussianBelief kf_step(const GaussianBelief& belief, const Matrix& a,
                       const Matrix& sigma, const ObservationModel& obs,
                       const Vector& y) {
  return kf_analysis(kf_forecast(belief, a, sigma), obs.h(), obs.r(), y).belief;
}

namespace {

GaussianBelief ekf_forecast(const GaussianBelief& belief, const Model& model,
                            double eps) {
  if (eps <= 0.0) eps = default_fd_epsilon(belief.mean);
  const Matrix jac = flow_jacobian(model, belief.mean, eps);
  const Eigen::Index n = belief.mean.size();
  return GaussianBelief{
      step_deterministic(model, belief.mean),
      linalg::symmetrize(jac * belief.cov * jac.transpose() +
                         model.spec.model_noise_var * Matrix::Identity(n, n))};
}

}  // namespace

GaussianBelief ekf_step(const GaussianBelief& belief, const Model& model,
                        const ObservationModel& obs, const Vector& y, double eps) {
  return kf_analysis(ekf_forecast(belief, model, eps), obs.h(), obs.r(), y).belief;
}

Matrix ekf_aus_gain(const Matrix& pf, const SubspaceBasis& basis,
                    const ObservationModel& obs) {
  const Matrix& u = basis.u();
  const Matrix reduced = linalg::symmetrize(u.transpose() * pf * u);  // p x p
  const Matrix hu = obs.h() * u;                                      // M x p
  const Matrix s = linalg::symmetrize(hu * reduced * hu.transpose() + obs.r());
  Eigen::LLT<Matrix> llt(s);
  if (llt.info() != Eigen::Success)
    throw Error(ErrorCode::IllConditioned,
                "AUS innovation covariance is not positive definite");
  return (u * reduced) * llt.solve(hu).transpose();
}

Matrix projected_data_gain(const Matrix& pf, const SubspaceBasis& basis,
                           const ObservationModel& obs) {
  const Matrix p = basis.projector();
  const Matrix& hdag = obs.pseudo_inverse();
  const Matrix inner = p * hdag * (obs.h() * pf * obs.h().transpose() + obs.r()) *
                       hdag.transpose() * p;
  return pf * obs.projector() * p * linalg::pinv(linalg::symmetrize(inner));
}

GaussianBelief ekf_aus_step(const GaussianBelief& belief, const Model& model,
                            const ObservationModel& obs, const Vector& y,
                            const SubspaceBasis& basis, double eps) {
  const GaussianBelief fc = ekf_forecast(belief, model, eps);
  const Matrix k = ekf_aus_gain(fc.cov, basis, obs);
  const Eigen::Index n = fc.mean.size();
  const Matrix ikh = Matrix::Identity(n, n) - k * obs.h();
  Vector mean = fc.mean + k * (y - obs.h() * fc.mean);
  Matrix cov = ikh * fc.cov * ikh.transpose() + k * obs.r() * k.transpose();
  return GaussianBelief::make(std::move(mean), std::move(cov));
}

// --- ETKF ---------------------------------------------------------------------------

void etkf_analysis(Ensemble& ens, const Matrix& h, const Matrix& whitener,
                   const Vector& y, double inflation) {
  require(ens.size() >= 2, ErrorCode::Config, "ETKF needs at least 2 members");
  require(inflation > 0.0, ErrorCode::Config, "inflation must be > 0");
  require(h.cols() == ens.dim() && h.rows() == y.size() &&
              whitener.cols() == y.size(),
          ErrorCode::Dimension, "ETKF observation shapes do not match");
  const double l = static_cast<double>(ens.size());
  const Vector xbar = ens.particles.rowwise().mean();
  const Matrix x = (ens.particles.colwise() - xbar) * std::sqrt(inflation);
  const double root = std::sqrt(l - 1.0);
  const Matrix s = whitener * (h * x) / root;        // r x L
  const Vector d = whitener * (y - h * xbar) / root;  // r

  Eigen::SelfAdjointEigenSolver<Matrix> eig(linalg::symmetrize(s * s.transpose()));
  if (eig.info() != Eigen::Success)
    throw Error(ErrorCode::IllConditioned, "ETKF eigendecomposition failed");
  const Vector& lam = eig.eigenvalues();
  const Matrix& vecs = eig.eigenvectors();

  // Mean weights S^T (I + S S^T)^{-1} d.
  const Vector coeff =
      vecs * (vecs.transpose() * d).cwiseQuotient((1.0 + lam.array()).matrix());
  const Vector wbar = s.transpose() * coeff;

  // (I + S^T S)^{-1/2} = I + B diag((1 + lam)^{-1/2} - 1) B^T on range(S^T).
  const double top = lam.size() ? std::max(lam.maxCoeff(), 0.0) : 0.0;
  std::vector<Eigen::Index> kept;
  for (Eigen::Index i = 0; i < lam.size(); ++i)
    if (top > 0.0 && lam(i) > 1e-12 * top) kept.push_back(i);
  const auto k = static_cast<Eigen::Index>(kept.size());
  Matrix b(ens.size(), k);
  Vector c(k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const double v = lam(kept[j]);
    b.col(j) = s.transpose() * vecs.col(kept[j]) / std::sqrt(v);
    c(j) = 1.0 / std::sqrt(1.0 + v) - 1.0;
  }
  const Matrix xb = x * b;
  Matrix anomalies = x + xb * c.asDiagonal() * b.transpose();
  const Vector mean = xbar + x * wbar;
  ens.particles = anomalies.colwise() + mean;
  ens.set_uniform();
}

StepOutcome etkf_step(Ensemble& ens, const Model& model,
                      const ObservationModel& obs, const Vector& y,
                      double inflation, RandomStream& rng) {
  check_ensemble(ens, model);
  step_stochastic_columns(model, ens.particles, rng);
  etkf_analysis(ens, obs.h(), obs.r_inverse().whitener, y, inflation);
  StepOutcome out;
  out.ess = ens.size();
  out.mean = ens.mean();
  return out;
}

StepOutcome proj_etkf_step(Ensemble& ens, const Model& model,
                           const ProjectedObservationModel& pm, const Vector& yq,
                           double inflation, RandomStream& rng) {
  check_ensemble(ens, model);
  step_stochastic_columns(model, ens.particles, rng);
  etkf_analysis(ens, pm.hq, pm.rq_whitener, yq, inflation);
  StepOutcome out;
  out.ess = ens.size();
  out.mean = ens.mean();
  return out;
}

}  // namespace projda
