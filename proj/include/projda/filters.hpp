#pragma once

#include "projda/core.hpp"
#include "projda/models.hpp"
#include "projda/observation.hpp"
#include "projda/projection.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace projda {

enum class FilterKind {
  BootstrapPF,
  OpPF,
  ProjPF,
  ProjOpPF,
  /// OP-PF weights with subspace-confined resampling noise (ablation).
  OpPfProjResamp,
  KF,
  EKF,
  EkfAus,
  ETKF,
  ProjETKF,
};

const char* to_string(FilterKind kind);
std::optional<FilterKind> filter_kind_from_string(std::string_view name);

bool is_particle_filter(FilterKind kind);
bool is_ensemble_filter(FilterKind kind);
bool is_gaussian_filter(FilterKind kind);
/// Kinds that need a tracked subspace basis.
bool needs_tracker(FilterKind kind);
/// Kinds whose resampling noise honours alpha.
bool uses_alpha(FilterKind kind);

/// Weighted particle cloud. Particles are stored one per column (N x L).
/// log_weights are canonical; weights are exp(log_weights) after normalize().
struct Ensemble {
  Matrix particles;
  Vector log_weights;
  Vector weights;

  static Ensemble uniform(Matrix particles);

  int size() const { return static_cast<int>(particles.cols()); }
  int dim() const { return static_cast<int>(particles.rows()); }

  /// Log-sum-exp normalization. Returns false when every log-weight is -inf
  /// or NaN, in which case the weights are left untouched.
  bool normalize();
  void set_uniform();
  Vector mean() const;
};

struct GaussianBelief {
  Vector mean;
  Matrix cov;

  /// Symmetrizes cov and clips eigenvalues below zero.
  static GaussianBelief make(Vector mean, Matrix cov);
};

/// 1 / sum w_i^2
double ess(const Vector& weights);

/// Systematic resampling indices for a fixed offset u in [0, 1).
std::vector<int> systematic_indices(const Vector& weights, double u);

Ensemble systematic_resample(const Ensemble& ens, RandomStream& rng);

/// N x L matrix whose columns are z (alpha P + (1 - alpha) I), z ~ N(0, omega^2 I).
Matrix proj_resample_noise(int n, int l, double omega, double alpha,
                           const SubspaceBasis& basis, RandomStream& rng);

struct ResampleSettings {
  double threshold = 0.5;
  double omega = 0.0;
  double alpha = 0.0;
};

struct StepOutcome {
  /// ESS after the weight update, before any resampling.
  double ess = 0.0;
  bool resampled = false;
  bool weight_collapse = false;
  /// Posterior mean estimate for the step (weighted mean before resampling).
  Vector mean;
};

/// Quantities of the optimal proposal that do not depend on the particle:
/// Sigma_p = (Sigma^{-1} + H^T R^{-1} H)^{-1}, the gain Sigma_p H^T R^{-1}
/// (evaluated as Sigma H^T (H Sigma H^T + R)^{-1}) and the weight covariance
/// H Sigma H^T + R.
class OptimalProposal {
 public:
  OptimalProposal(const Model& model, const ObservationModel& obs);

  const Matrix& gain() const { return gain_; }
  const Matrix& covariance() const { return cov_; }
  const Matrix& covariance_factor() const { return cov_factor_; }
  const Matrix& innovation_covariance() const { return innov_cov_; }
  double model_noise_var() const { return sigma2_; }

  /// -1/2 I^T (H Sigma H^T + R)^{-1} I for every column of the forecast.
  Vector log_weight_increments(const ObservationModel& obs, const Vector& y,
                               const Matrix& forecast) const;

 private:
  double sigma2_;
  Matrix gain_;
  Matrix cov_;
  Matrix cov_factor_;
  Matrix innov_cov_;
  Matrix innov_whitener_;
};

/// -1/2 (I^q)^T (H^q Sigma (H^q)^T + R^q)^+ I^q for every forecast column.
Vector projected_op_log_weight_increments(const ProjectedObservationModel& pm,
                                          double model_noise_var,
                                          const Vector& yq,
                                          const Matrix& forecast);

StepOutcome pf_bootstrap_step(Ensemble& ens, const Model& model,
                              const ObservationModel& obs, const Vector& y,
                              const ResampleSettings& settings, RandomStream& rng);

/// Bootstrap forecast, weights from the projected data model (PROJ-PF).
StepOutcome pf_proj_step(Ensemble& ens, const Model& model,
                         const ProjectedObservationModel& pm, const Vector& yq,
                         const ResampleSettings& settings, RandomStream& rng);

/// Optimal-proposal PF. Resampling noise is isotropic unless a basis is
/// supplied, in which case settings.alpha confines it (ablation mode).
StepOutcome op_pf_step(Ensemble& ens, const Model& model,
                       const OptimalProposal& proposal, const ObservationModel& obs,
                       const Vector& y, const ResampleSettings& settings,
                       RandomStream& rng,
                       const SubspaceBasis* resample_basis = nullptr);

/// Optimal-proposal particle update with the full data, weights from the
/// projected data model, subspace-confined resampling noise (PROJ-OP-PF).
StepOutcome proj_op_pf_step(Ensemble& ens, const Model& model,
                            const OptimalProposal& proposal,
                            const ObservationModel& obs, const Vector& y,
                            const ProjectedObservationModel& pm, const Vector& yq,
                            const SubspaceBasis& basis,
                            const ResampleSettings& settings, RandomStream& rng);

// --- Kalman family ---------------------------------------------------------

/// P^f H^T (H P^f H^T + R)^{-1}
Matrix kalman_gain(const Matrix& pf, const Matrix& h, const Matrix& r);

GaussianBelief kf_forecast(const GaussianBelief& belief, const Matrix& a,
                           const Matrix& sigma);

struct KalmanAnalysis {
  GaussianBelief belief;
  Matrix gain;
};

KalmanAnalysis kf_analysis(const GaussianBelief& forecast, const Matrix& h,
                           const Matrix& r, const Vector& y);

GaussianBelief kf_step(const GaussianBelief& belief, const Matrix& a,
                       const Matrix& sigma, const ObservationModel& obs,
                       const Vector& y);

/// Forecast with the nonlinear flow and the finite-difference Jacobian at
/// the prior analysis mean, then the Kalman update.
GaussianBelief ekf_step(const GaussianBelief& belief, const Model& model,
                        const ObservationModel& obs, const Vector& y,
                        double eps = 0.0);

/// P P^f P H^T (H P P^f P H^T + R)^{-1}, P = U U^T.
Matrix ekf_aus_gain(const Matrix& pf, const SubspaceBasis& basis,
                    const ObservationModel& obs);

/// Gain acting on y^p innovations:
/// P^f P_H P [P H^dagger (H P^f H^T + R) (H^dagger)^T P]^+.
Matrix projected_data_gain(const Matrix& pf, const SubspaceBasis& basis,
                           const ObservationModel& obs);

/// EKF forecast followed by an update with the AUS gain (Joseph form).
GaussianBelief ekf_aus_step(const GaussianBelief& belief, const Model& model,
                            const ObservationModel& obs, const Vector& y,
                            const SubspaceBasis& basis, double eps = 0.0);

// --- Ensemble transform Kalman filter --------------------------------------

/// Symmetric square-root ETKF analysis of a forecast ensemble in place.
/// `whitener` W satisfies W^T W = R^{-1} (or R^+).
void etkf_analysis(Ensemble& ens, const Matrix& h, const Matrix& whitener,
                   const Vector& y, double inflation);

StepOutcome etkf_step(Ensemble& ens, const Model& model,
                      const ObservationModel& obs, const Vector& y,
                      double inflation, RandomStream& rng);

/// ETKF with (H^q, R^q, y^q) substituted for (H, R, y).
StepOutcome proj_etkf_step(Ensemble& ens, const Model& model,
                           const ProjectedObservationModel& pm, const Vector& yq,
                           double inflation, RandomStream& rng);

// --- Sequential driver -----------------------------------------------------

struct FilterConfig {
  FilterKind kind = FilterKind::BootstrapPF;
  std::string label;
  int n_particles = 100;
  double resample_threshold = 0.5;
  double resample_noise = 0.0;
  double resample_alpha = 0.0;
  int proj_rank = 0;
  double inflation = 1.0;
  std::uint64_t seed = 0;
  /// <= 0 selects default_fd_epsilon at each linearization point.
  double fd_epsilon = 0.0;

  void validate(int state_dim) const;
};

struct TrackerPolicy {
  std::uint64_t seed = 0;
  double epsilon = 0.0;
  /// Tracker steps taken along the tail of TwinData::prehistory before the
  /// first assimilation step.
  int warmup_steps = 0;
};

struct InitialCondition {
  Vector mean;
  double stddev = 0.0;
};

struct AssimilationStepRecord {
  int step = 0;
  double time = 0.0;
  Vector analysis_mean;
  double rmse = 0.0;
  double ess = 0.0;
  bool resampled = false;
  bool weight_collapse = false;
  bool diverged = false;
  int proj_rank = 0;
  double wall_seconds = 0.0;
};

std::vector<AssimilationStepRecord> run_filter(
    const FilterConfig& config, const Model& model, const ObservationModel& obs,
    const TwinData& twin, const InitialCondition& init,
    const TrackerPolicy& tracker, double divergence_ceiling);

}  // namespace projda
