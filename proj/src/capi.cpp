#include "projda/projda.h"

#include "projda/harness.hpp"

#include <exception>
#include <new>
#include <optional>
#include <string>

struct projda_experiment {
  projda::harness::ExperimentConfig config;
  bool quick = false;
  int jobs = 1;
  std::optional<projda::harness::ExperimentResult> result;
};

namespace {

thread_local std::string last_error;

projda_status fail(projda_status status, const std::string& message) {
  last_error = message;
  return status;
}

projda_status from_error(const projda::Error& e) {
  using projda::ErrorCode;
  const std::string msg = std::string(projda::to_string(e.code())) + ": " + e.what();
  switch (e.code()) {
    case ErrorCode::Config:
    case ErrorCode::Dimension:
    case ErrorCode::Length:
      return fail(PROJDA_ERR_CONFIG, msg);
    case ErrorCode::Io:
      return fail(PROJDA_ERR_IO, msg);
    case ErrorCode::Gap:
      return fail(PROJDA_ERR_GAP, msg);
    case ErrorCode::IntegrationBlowup:
    case ErrorCode::WeightCollapse:
    case ErrorCode::DegenerateProjection:
    case ErrorCode::SubspaceCollapse:
      return fail(PROJDA_ERR_DIVERGED, msg);
    default:
      return fail(PROJDA_ERR_INTERNAL, msg);
  }
}

template <class Fn>
projda_status guarded(Fn&& fn) {
  try {
    last_error.clear();
    return fn();
  } catch (const projda::Error& e) {
    return from_error(e);
  } catch (const std::bad_alloc&) {
    return fail(PROJDA_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(PROJDA_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(PROJDA_ERR_INTERNAL, "unknown exception");
  }
}

projda_status execute(projda_experiment* exp, const char* out_dir, bool sweep) {
  if (exp == nullptr) return fail(PROJDA_ERR_ARGUMENT, "experiment handle is NULL");
  return guarded([&] {
    namespace h = projda::harness;
    const h::ExperimentConfig cfg = exp->quick ? exp->config.quickened() : exp->config;
    h::RunOptions options;
    options.jobs = exp->jobs;
    options.keep_records = !sweep;
    exp->result.reset();
    exp->result = sweep ? h::run_sweep(cfg, options) : h::run_experiment(cfg, options);
    if (out_dir != nullptr) h::write_results(cfg, *exp->result, out_dir);
    if (exp->result->any_failed() || exp->result->any_diverged()) {
      bool best_bad = !sweep;
      if (sweep)
        for (const auto& row : exp->result->rows)
          if (row.best && (row.diverged_count > 0 || row.failed_count > 0)) best_bad = true;
      if (best_bad)
        return fail(PROJDA_ERR_DIVERGED, "at least one run diverged or failed");
    }
    return PROJDA_OK;
  });
}

projda_status adopt(projda::harness::ExperimentConfig cfg, projda_experiment** out) {
  auto* exp = new projda_experiment;
  exp->config = std::move(cfg);
  *out = exp;
  return PROJDA_OK;
}

}  // namespace

extern "C" {

const char* projda_version(void) { return "1.0.0"; }

const char* projda_last_error(void) { return last_error.c_str(); }

projda_status projda_experiment_load(const char* path, projda_experiment** out) {
  if (path == nullptr || out == nullptr)
    return fail(PROJDA_ERR_ARGUMENT, "path and out must not be NULL");
  *out = nullptr;
  return guarded([&] {
    try {
      return adopt(projda::harness::ExperimentConfig::load(path), out);
    } catch (const projda::Error& e) {
      if (e.code() == projda::ErrorCode::Io)
        return fail(PROJDA_ERR_CONFIG, std::string("io: ") + e.what());
      throw;
    }
  });
}

projda_status projda_experiment_from_json(const char* json, projda_experiment** out) {
  if (json == nullptr || out == nullptr)
    return fail(PROJDA_ERR_ARGUMENT, "json and out must not be NULL");
  *out = nullptr;
  return guarded(
      [&] { return adopt(projda::harness::ExperimentConfig::from_json(json), out); });
}

void projda_experiment_free(projda_experiment* exp) { delete exp; }

projda_status projda_experiment_set_seed(projda_experiment* exp, uint64_t seed) {
  if (exp == nullptr) return fail(PROJDA_ERR_ARGUMENT, "experiment handle is NULL");
  exp->config.seed = seed;
  return PROJDA_OK;
}

projda_status projda_experiment_set_quick(projda_experiment* exp, int quick) {
  if (exp == nullptr) return fail(PROJDA_ERR_ARGUMENT, "experiment handle is NULL");
  exp->quick = quick != 0;
  return PROJDA_OK;
}

projda_status projda_experiment_set_jobs(projda_experiment* exp, int jobs) {
  if (exp == nullptr) return fail(PROJDA_ERR_ARGUMENT, "experiment handle is NULL");
  if (jobs < 0) return fail(PROJDA_ERR_ARGUMENT, "jobs must be >= 0");
  exp->jobs = jobs;
  return PROJDA_OK;
}

projda_status projda_experiment_validate(const projda_experiment* exp, int sweep_mode) {
  if (exp == nullptr) return fail(PROJDA_ERR_ARGUMENT, "experiment handle is NULL");
  return guarded([&] {
    exp->config.validate(sweep_mode != 0);
    return PROJDA_OK;
  });
}

projda_status projda_experiment_run(projda_experiment* exp, const char* out_dir) {
  return execute(exp, out_dir, false);
}

projda_status projda_experiment_sweep(projda_experiment* exp, const char* out_dir) {
  return execute(exp, out_dir, true);
}

size_t projda_experiment_result_count(const projda_experiment* exp) {
  if (exp == nullptr || !exp->result) return 0;
  return exp->result->rows.size();
}

projda_status projda_experiment_result(const projda_experiment* exp, size_t index,
                                       projda_result_row* out) {
  if (exp == nullptr || out == nullptr)
    return fail(PROJDA_ERR_ARGUMENT, "experiment and out must not be NULL");
  if (!exp->result || index >= exp->result->rows.size())
    return fail(PROJDA_ERR_ARGUMENT, "result index out of range");
  const auto& row = exp->result->rows[index];
  out->filter = row.filter.c_str();
  out->proj_rank = row.point.proj_rank;
  out->omega = row.point.omega;
  out->alpha = row.point.alpha;
  out->repetitions = row.repetitions;
  out->mean_rmse = row.mean_rmse;
  out->std_rmse = row.std_rmse;
  out->resample_pct = row.resample_pct;
  out->diverged_count = row.diverged_count;
  out->failed_count = row.failed_count;
  out->best = row.best ? 1 : 0;
  return PROJDA_OK;
}

projda_status projda_emit_figure(const char* results_dir, const char* figure_id,
                                 const char* out_dir) {
  if (results_dir == nullptr || figure_id == nullptr || out_dir == nullptr)
    return fail(PROJDA_ERR_ARGUMENT, "arguments must not be NULL");
  return guarded([&] {
    projda::harness::emit_plot_data(results_dir, figure_id, out_dir);
    return PROJDA_OK;
  });
}

uint64_t projda_derive_seed(uint64_t base, int repetition, projda_seed_role role,
                            int index) {
  return projda::harness::derive_seed(
      base, repetition, static_cast<projda::harness::SeedRole>(role), index);
}

}  // extern "C"
