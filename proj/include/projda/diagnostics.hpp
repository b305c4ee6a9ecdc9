#pragma once

#include "projda/core.hpp"
#include "projda/filters.hpp"
#include "projda/observation.hpp"
#include "projda/projection.hpp"

#include <vector>

namespace projda {

/// sqrt(sum (e_i - t_i)^2 / N)
double rmse(const Vector& estimate, const Vector& truth);

struct RunSummary {
  double mean_rmse = 0.0;
  int spinup = 0;
  int window = 0;
  double resample_pct = 0.0;
  double mean_ess = 0.0;
  int weight_collapses = 0;
  bool diverged = false;
};

/// Statistics over records [spinup, spinup + window). Divergence is flagged
/// when any in-window RMSE exceeds `ceiling` or is not finite.
RunSummary summarize_run(const std::vector<AssimilationStepRecord>& records,
                         int spinup, int window, double ceiling);

/// Hellinger distance between two Gaussians, d^2 = 1 - BC with the
/// Bhattacharyya coefficient evaluated from log-determinants.
double gaussian_hellinger(const GaussianBelief& g1, const GaussianBelief& g2);

struct ConsistencyCheck {
  GaussianBelief full_posterior;
  GaussianBelief projected_posterior;
  double hellinger = 0.0;
  /// Monte Carlo estimate of 1/2 E^mu (1 - sqrt(p(yq_perp|yq) / p(yq_perp|u, yq)))^2
  /// with u drawn from the full posterior, evaluated as 1 - E^mu sqrt(ratio)
  /// because E^mu ratio = 1. Standard error and the implied distance
  /// sqrt(bound_mean) go with it.
  double bound_mean = 0.0;
  double bound_std_error = 0.0;
  double bound = 0.0;
  int samples = 0;
};

/// One linear-Gaussian analysis from `prior` with the full data y and with
/// the projected data of `basis`, compared in Hellinger distance. The Monte
/// Carlo bound needs an invertible H (M = N) and p < N; otherwise it is
/// reported as zero with samples = 0.
ConsistencyCheck subspace_consistency_check(const GaussianBelief& prior,
                                              const ObservationModel& obs,
                                              const SubspaceBasis& basis,
                                              const Vector& y, int n_samples,
                                              RandomStream& rng);

/// Spearman rank correlation with average ranks for ties.
double spearman_rho(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace projda
