#include "projda/diagnostics.hpp"

#include "projda/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace projda {

double rmse(const Vector& estimate, const Vector& truth) {
  require(estimate.size() == truth.size() && truth.size() > 0, ErrorCode::Dimension,
          "rmse needs two vectors of equal, non-zero length");
  return std::sqrt((estimate - truth).squaredNorm() /
                   static_cast<double>(truth.size()));
}

RunSummary summarize_run(const std::vector<AssimilationStepRecord>& records,
                         int spinup, int window, double ceiling) {
  require(spinup >= 0 && window >= 1, ErrorCode::Config,
          "spinup must be >= 0 and window >= 1");
  const auto needed = static_cast<std::size_t>(spinup) + static_cast<std::size_t>(window);
  require(records.size() >= needed, ErrorCode::Length,
          "run has " + std::to_string(records.size()) + " steps, summary needs " +
              std::to_string(needed));
  RunSummary s;
  s.spinup = spinup;
  s.window = window;
  int resampled = 0;
  for (std::size_t i = static_cast<std::size_t>(spinup); i < needed; ++i) {
    const auto& r = records[i];
    s.mean_rmse += r.rmse;
    s.mean_ess += r.ess;
    if (r.resampled) ++resampled;
    if (r.weight_collapse) ++s.weight_collapses;
    if (!std::isfinite(r.rmse) || r.rmse > ceiling) s.diverged = true;
  }
  s.mean_rmse /= window;
  s.mean_ess /= window;
  s.resample_pct = 100.0 * resampled / window;
  return s;
}

namespace {

Matrix regularized(const Matrix& c) {
  Matrix s = linalg::symmetrize(c);
  if (Eigen::LLT<Matrix>(s).info() != Eigen::Success) {
    s += 1e-12 * Matrix::Identity(s.rows(), s.cols());
    if (Eigen::LLT<Matrix>(s).info() != Eigen::Success)
      throw Error(ErrorCode::IllConditioned, "covariance is not positive definite");
  }
  return s;
}

}  // namespace

double gaussian_hellinger(const GaussianBelief& g1, const GaussianBelief& g2) {
  require(g1.mean.size() == g2.mean.size() && g1.cov.rows() == g2.cov.rows(),
          ErrorCode::Dimension, "Gaussians of different dimension");
  const Matrix c1 = regularized(g1.cov);
  const Matrix c2 = regularized(g2.cov);
  // Determinant ratio through the eigenvalues of C1^{-1} C2: each term is
  // O((lambda - 1)^2), so nearly equal covariances do not cancel to sqrt(eps).
  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> ges(c2, c1);
  if (ges.info() != Eigen::Success)
    throw Error(ErrorCode::IllConditioned, "generalized eigenproblem failed");
  double log_det_part = 0.0;
  for (Eigen::Index i = 0; i < ges.eigenvalues().size(); ++i) {
    const double d = std::max(ges.eigenvalues()(i), 1e-300) - 1.0;
    log_det_part += 0.25 * std::log1p(d) - 0.5 * std::log1p(0.5 * d);
  }
  const Eigen::LLT<Matrix> avg(0.5 * (c1 + c2));
  const Vector delta = g1.mean - g2.mean;
  const double log_bc = log_det_part - 0.125 * delta.dot(avg.solve(delta));
  return std::sqrt(std::min(std::max(0.0, -std::expm1(std::min(log_bc, 0.0))), 1.0));
}

namespace {

// Gaussian log density up to the shared 2 pi constant.
struct GaussianConditional {
  Matrix gain;        // Cov(b, a) Cov(a)^{-1}
  Eigen::LLT<Matrix> llt;
  double half_log_det = 0.0;

  GaussianConditional(const Matrix& caa, const Matrix& cab, const Matrix& cbb) {
    Eigen::LLT<Matrix> a_llt(linalg::symmetrize(caa));
    if (a_llt.info() != Eigen::Success)
      throw Error(ErrorCode::IllConditioned, "conditioning block is singular");
    gain = a_llt.solve(cab).transpose();
    llt.compute(linalg::symmetrize(cbb - gain * cab));
    if (llt.info() != Eigen::Success)
      throw Error(ErrorCode::IllConditioned, "conditional covariance is singular");
    half_log_det = llt.matrixLLT().diagonal().array().log().sum();
  }

  double log_density(const Vector& residual) const {
    const Vector w = llt.matrixL().solve(residual);
    return -0.5 * w.squaredNorm() - half_log_det;
  }
};

}  // namespace

ConsistencyCheck subspace_consistency_check(const GaussianBelief& prior,
                                              const ObservationModel& obs,
                                              const SubspaceBasis& basis,
                                              const Vector& y, int n_samples,
                                              RandomStream& rng) {
  require(n_samples >= 0, ErrorCode::Config, "n_samples must be >= 0");
  ConsistencyCheck out;
  out.full_posterior = kf_analysis(prior, obs.h(), obs.r(), y).belief;
  const ProjectedObservationModel pm = build_projected_model(obs, basis);
  const Vector yq = project_observation(pm, basis, obs, y);
  out.projected_posterior = kf_analysis(prior, pm.hq, pm.rq, yq).belief;
  out.hellinger = gaussian_hellinger(out.full_posterior, out.projected_posterior);

  if (n_samples == 0 || obs.obs_dim() != obs.state_dim() ||
      basis.rank() >= basis.dim())
    return out;

  const JointProjectedModel jm = build_orthogonal_model(obs, basis);
  const Vector lifted = obs.lift(y);
  const Vector yp = jm.u_perp.transpose() * lifted;

  // p(yq_perp | u, yq): conditional of the joint data noise.
  const GaussianConditional given_u(jm.rq, jm.r12, jm.rq_perp);
  // p(yq_perp | yq): the joint data distribution under the prior.
  const Matrix hp = jm.hq * prior.cov;
  const Matrix hpp = jm.hq_perp * prior.cov;
  const GaussianConditional marginal(
      jm.hq * hp.transpose() + jm.rq, hp * jm.hq_perp.transpose() + jm.r12,
      jm.hq_perp * hpp.transpose() + jm.rq_perp);
  const double log_marginal = marginal.log_density(
      yp - jm.hq_perp * prior.mean - marginal.gain * (yq - jm.hq * prior.mean));

  // With r = p(u|yq) / p(u|y) the target is 1/2 E(1 - sqrt r)^2. Since E r = 1
  // exactly this equals 1 - E sqrt r; r itself has infinite variance whenever
  // the projected posterior is much wider, sqrt r does not.
  const Matrix factor = linalg::symmetric_sqrt(out.full_posterior.cov);
  double sum = 0.0;
  double sum_sq = 0.0;
  for (int k = 0; k < n_samples; ++k) {
    const Vector u =
        out.full_posterior.mean + factor * rng.normal_vector(basis.dim());
    const double log_cond = given_u.log_density(
        yp - jm.hq_perp * u - given_u.gain * (yq - jm.hq * u));
    const double root = std::exp(0.5 * (log_marginal - log_cond));
    sum += root;
    sum_sq += root * root;
  }
  const double n = static_cast<double>(n_samples);
  out.samples = n_samples;
  const double mean_root = sum / n;
  out.bound_mean = std::max(0.0, 1.0 - mean_root);
  const double var = std::max(0.0, sum_sq / n - mean_root * mean_root);
  out.bound_std_error = n > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
  out.bound = std::sqrt(out.bound_mean);
  return out;
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, ErrorCode::Length,
          "spearman_rho needs two series of equal length >= 2");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace projda
