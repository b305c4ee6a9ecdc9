#include "projda/projda.h"

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <string>

namespace {

int exit_code(projda_status s) {
  switch (s) {
    case PROJDA_OK:
      return 0;
    case PROJDA_ERR_CONFIG:
    case PROJDA_ERR_GAP:
    case PROJDA_ERR_ARGUMENT:
      return 2;
    case PROJDA_ERR_DIVERGED:
      return 3;
    default:
      return 4;
  }
}

int report(projda_status s) {
  if (s != PROJDA_OK) std::fprintf(stderr, "projda: %s\n", projda_last_error());
  return exit_code(s);
}

struct Common {
  std::string config;
  std::string out = "results";
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool quick = false;
  int jobs = 1;
};

int with_experiment(const Common& c, bool sweep) {
  projda_experiment* exp = nullptr;
  projda_status s = projda_experiment_load(c.config.c_str(), &exp);
  if (s != PROJDA_OK) return report(s);
  if (c.seed_set) projda_experiment_set_seed(exp, c.seed);
  projda_experiment_set_quick(exp, c.quick ? 1 : 0);
  s = projda_experiment_set_jobs(exp, c.jobs);
  if (s == PROJDA_OK)
    s = sweep ? projda_experiment_sweep(exp, c.out.c_str())
              : projda_experiment_run(exp, c.out.c_str());
  if (s == PROJDA_OK || s == PROJDA_ERR_DIVERGED) {
    const size_t n = projda_experiment_result_count(exp);
    for (size_t i = 0; i < n; ++i) {
      projda_result_row row;
      if (projda_experiment_result(exp, i, &row) != PROJDA_OK) continue;
      if (sweep && !row.best) continue;
      std::printf("%-20s p=%-3d omega=%-10.4g alpha=%-5.3g rmse=%.4f +- %.4f  resample=%.1f%%  diverged=%d/%d\n",
                  row.filter, row.proj_rank, row.omega, row.alpha, row.mean_rmse,
                  row.std_rmse, row.resample_pct, row.diverged_count, row.repetitions);
    }
    std::printf("results written to %s\n", c.out.c_str());
  }
  const int code = report(s);
  projda_experiment_free(exp);
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Projected-data particle and Kalman filters: twin experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(projda_version()));

  Common run_opts;
  Common sweep_opts;
  for (auto [name, desc, opts] :
       {std::tuple{"run", "Run every configured filter on shared twin data", &run_opts},
        std::tuple{"sweep", "Run the (p, omega, alpha) grid and aggregate", &sweep_opts}}) {
    auto* sub = app.add_subcommand(name, desc);
    sub->add_option("config", opts->config, "Experiment config (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--out", opts->out, "Output directory")->capture_default_str();
    sub->add_option("--seed", opts->seed, "Override the base seed")
        ->each([opts](const std::string&) { opts->seed_set = true; });
    sub->add_flag("--quick", opts->quick, "Reduced repetitions and particle counts");
    sub->add_option("--jobs", opts->jobs, "Worker threads (0 = all cores)")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
  }

  std::string validate_config;
  bool validate_sweep = false;
  auto* validate = app.add_subcommand("validate", "Check a config without running it");
  validate->add_option("config", validate_config, "Experiment config (JSON)")->required();
  validate->add_flag("--sweep", validate_sweep, "Also require a sweep grid");

  std::string results_dir;
  std::string figure;
  std::string figure_out;
  auto* emit = app.add_subcommand("emit", "Write figure data from a results directory");
  emit->add_option("results", results_dir, "Results directory")->required();
  emit->add_option("--figure", figure, "Figure id")
      ->required()
      ->check(CLI::IsMember({"l96_tune_p", "l96_tune_omega_alpha", "oppf_tune_omega",
                             "etkf_tune_p", "rmse_series"}));
  emit->add_option("--out", figure_out, "Output directory (default: results directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  if (app.got_subcommand("run")) return with_experiment(run_opts, false);
  if (app.got_subcommand("sweep")) return with_experiment(sweep_opts, true);
  if (app.got_subcommand("validate")) {
    projda_experiment* exp = nullptr;
    projda_status s = projda_experiment_load(validate_config.c_str(), &exp);
    if (s == PROJDA_OK) s = projda_experiment_validate(exp, validate_sweep ? 1 : 0);
    projda_experiment_free(exp);
    if (s == PROJDA_OK) std::printf("%s: ok\n", validate_config.c_str());
    return report(s);
  }
  const std::string out = figure_out.empty() ? results_dir : figure_out;
  const projda_status s = projda_emit_figure(results_dir.c_str(), figure.c_str(), out.c_str());
  if (s == PROJDA_OK) std::printf("wrote %s/%s.csv\n", out.c_str(), figure.c_str());
  return report(s);
}
