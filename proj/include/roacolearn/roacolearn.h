/* C interface to the roacolearn library.
 *
 * Every handle is opaque and owned by the caller once returned; release it
 * with the matching *_free function. Functions return RCL_OK or an error
 * status; rcl_last_error() then describes the failure (per thread).
 * Strings returned through char** are released with rcl_string_free. */
#ifndef ROACOLEARN_H
#define ROACOLEARN_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(ROACOLEARN_BUILD)
#    define RCL_API __declspec(dllexport)
#  else
#    define RCL_API __declspec(dllimport)
#  endif
#else
#  define RCL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum rcl_status {
  RCL_OK = 0,
  RCL_E_INVALID_ARGUMENT = 1,
  RCL_E_DIMENSION_MISMATCH = 2,
  RCL_E_UNKNOWN_SYSTEM = 3,
  RCL_E_INTEGRATION_OVERFLOW = 4,
  RCL_E_GAP_DEGENERATE = 5,
  RCL_E_CONDITIONING = 6,
  RCL_E_DIVERGENCE = 7,
  RCL_E_NO_CLOSED_ORBIT = 8,
  RCL_E_PRECONDITION = 9,
  RCL_E_IO = 10,
  RCL_E_CONFIG = 11,
  RCL_E_EMPTY_INTERIOR = 12,
  RCL_E_INTERNAL = 100
} rcl_status;

typedef struct rcl_config rcl_config;
typedef struct rcl_result rcl_result;
typedef struct rcl_comparison rcl_comparison;

typedef struct rcl_stage_report {
  int stage;
  double level_before;
  double level;
  double gap_volume;
  int new_trajectories;
  int cumulative_trajectories;
  int stable_labels;
  int unstable_labels;
  double ode_mse; /* NaN when no true boundary is available */
  long decrease_violations;
  int level_shrunk;
} rcl_stage_report;

typedef struct rcl_comparison_row {
  uint64_t seed;
  const char* method; /* "ball", "roa" or "roa+reg"; owned by the table */
  int trajectories;
  int stages;
  double mse;          /* NaN when the cell failed */
  const char* error;   /* empty unless the cell failed */
} rcl_comparison_row;

RCL_API const char* rcl_last_error(void);
RCL_API const char* rcl_status_string(rcl_status status);
RCL_API void rcl_string_free(char* s);

/* Configuration */
RCL_API rcl_status rcl_config_default(rcl_config** out);
RCL_API rcl_status rcl_config_from_json(const char* text, rcl_config** out);
RCL_API rcl_status rcl_config_load(const char* path, rcl_config** out);
RCL_API rcl_status rcl_config_clone(const rcl_config* cfg, rcl_config** out);
RCL_API void rcl_config_free(rcl_config* cfg);
RCL_API rcl_status rcl_config_set_seed(rcl_config* cfg, uint64_t seed);
/* method: "ball", "roa" or "roa+reg" */
RCL_API rcl_status rcl_config_set_method(rcl_config* cfg, const char* method);
RCL_API rcl_status rcl_config_set_max_stages(rcl_config* cfg, int stages);
RCL_API rcl_status rcl_config_to_json(const rcl_config* cfg, char** out);

/* Runs. A run that fails part-way still yields a result holding the
 * completed stages; the status reports the failure. */
RCL_API rcl_status rcl_run(const rcl_config* cfg, rcl_result** out);
RCL_API void rcl_result_free(rcl_result* result);
RCL_API size_t rcl_result_stage_count(const rcl_result* result);
RCL_API rcl_status rcl_result_stage(const rcl_result* result, size_t index,
                                    rcl_stage_report* out);
RCL_API const char* rcl_result_stop_reason(const rcl_result* result);
RCL_API const char* rcl_result_diagnostic(const rcl_result* result);
RCL_API double rcl_result_level(const rcl_result* result);
RCL_API size_t rcl_result_dim(const rcl_result* result);
RCL_API size_t rcl_result_trajectory_count(const rcl_result* result);
/* x holds count states of rcl_result_dim() values each. */
RCL_API rcl_status rcl_result_eval_lyapunov(const rcl_result* result, const double* x,
                                            size_t count, double* values);
RCL_API rcl_status rcl_result_eval_field(const rcl_result* result, const double* x,
                                         size_t count, double* field);
RCL_API rcl_status rcl_result_mse(const rcl_result* result, double* out);
RCL_API rcl_status rcl_result_export(const rcl_result* result, const char* dir);

/* True ROA boundary of the configured system, written to dir. */
RCL_API rcl_status rcl_truth_export(const rcl_config* cfg, const char* dir,
                                    double* area);

/* Method comparison over seeds: ball, roa and roa+reg for every seed. */
RCL_API rcl_status rcl_compare(const rcl_config* cfg, const uint64_t* seeds,
                               size_t seed_count, rcl_comparison** out);
RCL_API void rcl_comparison_free(rcl_comparison* table);
RCL_API size_t rcl_comparison_row_count(const rcl_comparison* table);
RCL_API rcl_status rcl_comparison_row_at(const rcl_comparison* table, size_t index,
                                         rcl_comparison_row* out);
RCL_API rcl_status rcl_comparison_median(const rcl_comparison* table, const char* method,
                                         double* trajectories, double* mse);
RCL_API rcl_status rcl_comparison_export(const rcl_comparison* table, const char* dir);

/* Invariant checks. *report receives a JSON array of {name, passed,
 * detail}; *all_passed is 1 when every check passed. */
RCL_API rcl_status rcl_check(const rcl_config* cfg, char** report, int* all_passed);

#ifdef __cplusplus
}
#endif

#endif
