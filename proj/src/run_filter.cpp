#include "projda/filters.hpp"

#include "projda/diagnostics.hpp"

#include <chrono>
#include <cmath>
#include <optional>
#include <string>

namespace projda {

void FilterConfig::validate(int state_dim) const {
  const std::string who = label.empty() ? std::string(to_string(kind)) : label;
  if (is_ensemble_filter(kind))
    require(n_particles >= 2, ErrorCode::Config,
            who + ": n_particles must be >= 2");
  require(resample_threshold > 0.0 && resample_threshold <= 1.0, ErrorCode::Config,
          who + ": resample_threshold must lie in (0, 1]");
  require(resample_noise >= 0.0 && std::isfinite(resample_noise), ErrorCode::Config,
          who + ": resample_noise must be >= 0");
  require(resample_alpha >= 0.0 && resample_alpha <= 1.0, ErrorCode::Config,
          who + ": resample_alpha must lie in [0, 1]");
  require(inflation > 0.0, ErrorCode::Config, who + ": inflation must be > 0");
  if (needs_tracker(kind))
    require(proj_rank >= 1 && proj_rank <= state_dim, ErrorCode::Config,
            who + ": proj_rank must satisfy 1 <= p <= " + std::to_string(state_dim));
}

namespace {

bool uses_optimal_proposal(FilterKind kind) {
  return kind == FilterKind::OpPF || kind == FilterKind::ProjOpPF ||
         kind == FilterKind::OpPfProjResamp;
}

}  // namespace

std::vector<AssimilationStepRecord> run_filter(
    const FilterConfig& config, const Model& model, const ObservationModel& obs,
    const TwinData& twin, const InitialCondition& init,
    const TrackerPolicy& tracker, double divergence_ceiling) {
  const int n = model.dim();
  config.validate(n);
  require(obs.state_dim() == n, ErrorCode::Dimension,
          "observation operator does not match the model");
  require(init.mean.size() == n, ErrorCode::Dimension,
          "initial mean does not match the model");
  require(init.stddev >= 0.0, ErrorCode::Config, "initial stddev must be >= 0");
  require(twin.truth.rows() == n && twin.truth.cols() == twin.steps() + 1 &&
              twin.observations.rows() == obs.obs_dim(),
          ErrorCode::Dimension, "twin data shapes do not match the models");

  RandomStream rng(config.seed);
  const FilterKind kind = config.kind;

  std::optional<QrTracker> qr;
  if (needs_tracker(kind)) {
    RandomStream trng(tracker.seed);
    qr.emplace(QrTracker::init(n, config.proj_rank, trng));
    const auto available = static_cast<int>(twin.prehistory.cols());
    const int warm = std::min(tracker.warmup_steps, available);
    for (int k = available - warm; k < available; ++k)
      qr->step(model, twin.prehistory.col(k), tracker.epsilon);
  }

  std::optional<OptimalProposal> proposal;
  if (uses_optimal_proposal(kind)) proposal.emplace(model, obs);

  Ensemble ens;
  GaussianBelief belief;
  Vector linearization = init.mean;
  if (is_ensemble_filter(kind)) {
    Matrix particles = rng.normal_matrix(n, config.n_particles, init.stddev);
    particles.colwise() += init.mean;
    ens = Ensemble::uniform(std::move(particles));
    linearization = ens.mean();
  } else {
    belief = GaussianBelief::make(init.mean,
                                  init.stddev * init.stddev * Matrix::Identity(n, n));
  }
  if (kind == FilterKind::KF)
    require(static_cast<bool>(model.linear), ErrorCode::Config,
            "kf requires a linear model");

  const ResampleSettings settings{config.resample_threshold, config.resample_noise,
                                  config.resample_alpha};
  const Matrix sigma = model.spec.model_noise_var * Matrix::Identity(n, n);

  std::vector<AssimilationStepRecord> records;
  records.reserve(static_cast<std::size_t>(twin.steps()));
  for (int step = 0; step < twin.steps(); ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    const Vector y = twin.observations.col(step);

    StepOutcome out;
    try {
      std::optional<ProjectedObservationModel> pm;
      Vector yq;
      if (qr) {
        qr->step(model, linearization, config.fd_epsilon);
        pm = build_projected_model(obs, qr->basis());
        yq = project_observation(*pm, qr->basis(), obs, y);
      }

      switch (kind) {
        case FilterKind::BootstrapPF:
          out = pf_bootstrap_step(ens, model, obs, y, settings, rng);
          break;
        case FilterKind::ProjPF:
          out = pf_proj_step(ens, model, *pm, yq, settings, rng);
          break;
        case FilterKind::OpPF:
          out = op_pf_step(ens, model, *proposal, obs, y, settings, rng);
          break;
        case FilterKind::OpPfProjResamp:
          out = op_pf_step(ens, model, *proposal, obs, y, settings, rng, &qr->basis());
          break;
        case FilterKind::ProjOpPF:
          out = proj_op_pf_step(ens, model, *proposal, obs, y, *pm, yq, qr->basis(),
                                settings, rng);
          break;
        case FilterKind::ETKF:
          out = etkf_step(ens, model, obs, y, config.inflation, rng);
          break;
        case FilterKind::ProjETKF:
          out = proj_etkf_step(ens, model, *pm, yq, config.inflation, rng);
          break;
        case FilterKind::KF:
          belief = kf_step(belief, model.linear->propagator, sigma, obs, y);
          out.ess = 1.0;
          out.mean = belief.mean;
          break;
        case FilterKind::EKF:
          belief = ekf_step(belief, model, obs, y, config.fd_epsilon);
          out.ess = 1.0;
          out.mean = belief.mean;
          break;
        case FilterKind::EkfAus:
          belief = ekf_aus_step(belief, model, obs, y, qr->basis(), config.fd_epsilon);
          out.ess = 1.0;
          out.mean = belief.mean;
          break;
      }
    } catch (const Error& e) {
      const std::string who = config.label.empty() ? to_string(kind) : config.label;
      throw Error(e.code(), std::string(e.what()) + " (" + who + " step " +
                                std::to_string(step + 1) + ")");
    }

    AssimilationStepRecord rec;
    rec.step = step + 1;
    rec.time = (step + 1) * model.spec.obs_interval;
    rec.rmse = rmse(out.mean, twin.truth.col(step + 1));
    rec.analysis_mean = std::move(out.mean);
    rec.ess = out.ess;
    rec.resampled = out.resampled;
    rec.weight_collapse = out.weight_collapse;
    rec.diverged = !std::isfinite(rec.rmse) || rec.rmse > divergence_ceiling;
    rec.proj_rank = qr ? qr->basis().rank() : 0;
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    linearization = rec.analysis_mean;
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace projda
