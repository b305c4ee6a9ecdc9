/* C interface to the projected-data assimilation library. */
#ifndef PROJDA_PROJDA_H
#define PROJDA_PROJDA_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#if defined(PROJDA_BUILDING)
#define PROJDA_API __declspec(dllexport)
#else
#define PROJDA_API __declspec(dllimport)
#endif
#else
#define PROJDA_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum projda_status {
  PROJDA_OK = 0,
  PROJDA_ERR_CONFIG = 2,
  /* Results were written but at least one run diverged or failed. */
  PROJDA_ERR_DIVERGED = 3,
  PROJDA_ERR_INTERNAL = 4,
  PROJDA_ERR_IO = 5,
  /* Requested figure is not covered by the results. */
  PROJDA_ERR_GAP = 6,
  PROJDA_ERR_ARGUMENT = 7
} projda_status;

typedef enum projda_seed_role {
  PROJDA_SEED_TRUTH = 0,
  PROJDA_SEED_FILTER = 1,
  PROJDA_SEED_TRACKER = 2,
  PROJDA_SEED_SYSTEM = 3
} projda_seed_role;

typedef struct projda_experiment projda_experiment;

/* One aggregated (filter, grid point) row of the last run or sweep. The
   filter string is owned by the experiment handle. */
typedef struct projda_result_row {
  const char* filter;
  int proj_rank;
  double omega;
  double alpha;
  int repetitions;
  double mean_rmse;
  double std_rmse;
  double resample_pct;
  int diverged_count;
  int failed_count;
  int best;
} projda_result_row;

PROJDA_API const char* projda_version(void);

/* Message for the last failed call on this thread; never NULL. */
PROJDA_API const char* projda_last_error(void);

PROJDA_API projda_status projda_experiment_load(const char* path,
                                                projda_experiment** out);
PROJDA_API projda_status projda_experiment_from_json(const char* json,
                                                     projda_experiment** out);
PROJDA_API void projda_experiment_free(projda_experiment* exp);

PROJDA_API projda_status projda_experiment_set_seed(projda_experiment* exp,
                                                    uint64_t seed);
/* Nonzero reduces repetitions and particle counts per the config's quick block. */
PROJDA_API projda_status projda_experiment_set_quick(projda_experiment* exp,
                                                     int quick);
/* Worker threads; 0 uses all hardware threads. */
PROJDA_API projda_status projda_experiment_set_jobs(projda_experiment* exp,
                                                    int jobs);

/* sweep_mode nonzero also checks that a sweep grid is present. */
PROJDA_API projda_status projda_experiment_validate(const projda_experiment* exp,
                                                    int sweep_mode);

/* Runs and writes steps.csv, runs.csv, sweep.csv and summary.json into
   out_dir (skipped when out_dir is NULL). */
PROJDA_API projda_status projda_experiment_run(projda_experiment* exp,
                                               const char* out_dir);
PROJDA_API projda_status projda_experiment_sweep(projda_experiment* exp,
                                                 const char* out_dir);

PROJDA_API size_t projda_experiment_result_count(const projda_experiment* exp);
PROJDA_API projda_status projda_experiment_result(const projda_experiment* exp,
                                                  size_t index,
                                                  projda_result_row* out);

/* Writes <out_dir>/<figure_id>.csv from a results directory. */
PROJDA_API projda_status projda_emit_figure(const char* results_dir,
                                            const char* figure_id,
                                            const char* out_dir);

PROJDA_API uint64_t projda_derive_seed(uint64_t base, int repetition,
                                       projda_seed_role role, int index);

#ifdef __cplusplus
}
#endif

#endif
