#pragma once

#include "projda/diagnostics.hpp"
#include "projda/filters.hpp"
#include "projda/models.hpp"
#include "projda/observation.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace projda::harness {

inline constexpr int kSchemaVersion = 1;

enum class SeedRole : int { Truth = 0, Filter = 1, Tracker = 2, System = 3 };

/// splitmix64 over (base, repetition, role, index). Frozen: changing it
/// changes every published number.
std::uint64_t derive_seed(std::uint64_t base, int repetition, SeedRole role,
                          int index = 0);

struct ObservationSpec {
  std::vector<int> indices;
  double noise_var = 0.0;
};

/// Truth u0 = center + N(0, perturbation_std^2 I), then transient_time of
/// model time is integrated and discarded. center is F 1 for Lorenz-96 and
/// 0 for linear models.
struct TruthSpec {
  double perturbation_std = 0.5;
  double transient_time = 0.0;
  /// Model noise variance used for the truth only; negative means the
  /// forecast model's value.
  double model_noise_var = -1.0;
};

/// Filters start from N(u0 + bias 1, stddev^2 I).
struct InitSpec {
  double bias = 0.0;
  double stddev = 0.2;
};

struct SweepGrid {
  std::vector<int> proj_rank;
  std::vector<double> resample_noise;
  std::vector<double> resample_alpha;

  bool empty() const {
    return proj_rank.empty() && resample_noise.empty() && resample_alpha.empty();
  }
};

struct FilterEntry {
  FilterConfig config;
  /// Per-filter grid; axes left empty fall back to the experiment grid.
  SweepGrid sweep;
};

struct QuickSpec {
  int repetitions = 5;
  /// 0 keeps the configured particle counts.
  int n_particles = 0;
};

struct ExperimentConfig {
  std::string name = "experiment";
  ModelSpec model;
  ObservationSpec observation;
  TruthSpec truth;
  InitSpec init;
  int n_steps = 200;
  int spinup = 100;
  int window = 100;
  int repetitions = 1;
  std::uint64_t seed = 1;
  /// Divergence ceiling as a multiple of the truth's climatological std.
  double divergence_factor = 10.0;
  TrackerPolicy tracker;
  std::vector<FilterEntry> filters;
  SweepGrid sweep;
  QuickSpec quick;

  static ExperimentConfig from_json(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);
  std::string to_json() const;

  /// Throws ErrorCode::Config with a field-qualified message.
  void validate(bool sweep_mode = false) const;

  /// Copy with repetitions and particle counts reduced per `quick`.
  ExperimentConfig quickened() const;
};

struct GridPoint {
  int proj_rank = 0;
  double omega = 0.0;
  double alpha = 0.0;
};

struct RunResult {
  int repetition = 0;
  int filter_index = 0;
  std::string filter;
  FilterKind kind = FilterKind::BootstrapPF;
  GridPoint point;
  RunSummary summary;
  double ceiling = 0.0;
  bool failed = false;
  std::string error;
  std::vector<AssimilationStepRecord> records;
};

struct SweepRow {
  std::string filter;
  FilterKind kind = FilterKind::BootstrapPF;
  GridPoint point;
  int repetitions = 0;
  double mean_rmse = 0.0;
  double std_rmse = 0.0;
  double resample_pct = 0.0;
  int diverged_count = 0;
  int failed_count = 0;
  bool best = false;
};

struct ExperimentResult {
  std::vector<RunResult> runs;
  std::vector<SweepRow> rows;

  bool any_diverged() const;
  bool any_failed() const;
  /// Row with the lowest mean RMSE for a filter label, if any.
  const SweepRow* best(const std::string& filter) const;
};

struct RunOptions {
  int jobs = 1;
  bool keep_records = true;
};

/// Twin data for one repetition: truth transient, trajectory and data.
struct Scenario {
  Model model;
  ObservationModel obs;
  TwinData twin;
  InitialCondition init;
  double ceiling = 0.0;
};

ObservationModel make_observation_model(const ExperimentConfig& cfg);
Model make_model(const ExperimentConfig& cfg);
Scenario make_scenario(const ExperimentConfig& cfg, const Model& model,
                       int repetition);

/// Every configured filter at its configured parameters, on shared
/// truth and data within each repetition.
ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                const RunOptions& options = {});

/// Cartesian product of grid x filters x repetitions, aggregated per
/// (filter, grid point).
ExperimentResult run_sweep(const ExperimentConfig& cfg,
                           const RunOptions& options = {});

/// Aggregates runs into rows and marks the per-filter argmin.
std::vector<SweepRow> aggregate(const std::vector<RunResult>& runs);

/// Grid points a filter entry expands to, with axes that do not apply to
/// its kind collapsed to the configured value.
std::vector<GridPoint> expand_grid(const ExperimentConfig& cfg,
                                   const FilterEntry& entry);

/// steps.csv (when records are kept), runs.csv, sweep.csv, summary.json.
void write_results(const ExperimentConfig& cfg, const ExperimentResult& result,
                   const std::filesystem::path& out_dir);

/// Figure ids accepted by emit_plot_data.
std::vector<std::string> figure_ids();

/// Reads summary.json from `results_dir` and writes <figure_id>.csv into
/// `out_dir`. Missing coverage throws ErrorCode::Gap listing what is absent;
/// no file is written in that case.
std::filesystem::path emit_plot_data(const std::filesystem::path& results_dir,
                                     const std::string& figure_id,
                                     const std::filesystem::path& out_dir);

/// %.17g
std::string format_double(double v);

}  // namespace projda::harness
