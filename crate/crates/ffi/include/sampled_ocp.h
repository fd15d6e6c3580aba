#ifndef SAMPLED_OCP_H
#define SAMPLED_OCP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SocStatus {
  SOC_STATUS_OK = 0,
  SOC_STATUS_INVALID_ARGUMENT = 1,
  SOC_STATUS_PARSE = 2,
  SOC_STATUS_SOLVER = 3,
  SOC_STATUS_CERTIFICATION = 4,
  SOC_STATUS_REFERENCE = 5,
  SOC_STATUS_INTERNAL = 6,
} SocStatus;

/**
 * Problem instance.
 */
typedef struct SocProblem SocProblem;

/**
 * Residual report of a certification.
 */
typedef struct SocReport SocReport;

/**
 * Solution of a sampled problem.
 */
typedef struct SocSolution SocSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread; empty if none. The pointer
 * stays valid until the next failing call on this thread.
 */
const char *soc_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *soc_version(void);

/**
 * Build a catalog problem with default parameters.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out` must be writable.
 */
enum SocStatus soc_problem_from_catalog(const char *name, struct SocProblem **out);

/**
 * Build a problem from configuration text (TOML).
 *
 * # Safety
 * `config` must be a NUL-terminated string; `out` must be writable.
 */
enum SocStatus soc_problem_from_config(const char *config, struct SocProblem **out);

/**
 * # Safety
 * `problem` must come from a `soc_problem_*` constructor or be null.
 */
void soc_problem_free(struct SocProblem *problem);

/**
 * Writes state dimension, control dimension and horizon.
 *
 * # Safety
 * `problem` must be a live handle; outputs must be writable.
 */
enum SocStatus soc_problem_dims(const struct SocProblem *problem,
                                size_t *n,
                                size_t *m,
                                double *horizon);

/**
 * Solve on `intervals` uniform sampling intervals. Nonpositive tolerances
 * select the defaults.
 *
 * # Safety
 * `problem` must be a live handle; `out` must be writable.
 */
enum SocStatus soc_solve_uniform(const struct SocProblem *problem,
                                 size_t intervals,
                                 double feas_tol,
                                 double stat_tol,
                                 struct SocSolution **out);

/**
 * # Safety
 * `solution` must come from `soc_solve_uniform` or be null.
 */
void soc_solution_free(struct SocSolution *solution);

/**
 * Writes cost and terminal-constraint violation.
 *
 * # Safety
 * `solution` must be a live handle; outputs must be writable.
 */
enum SocStatus soc_solution_cost(const struct SocSolution *solution,
                                 double *cost,
                                 double *feasibility);

/**
 * Copies control values, interval-major (`intervals * m` entries). With a
 * null `buffer` only the required length is written to `len`.
 *
 * # Safety
 * `buffer` must hold `*len` doubles or be null; `len` must be writable.
 */
enum SocStatus soc_solution_control(const struct SocSolution *solution,
                                    double *buffer,
                                    size_t *len);

/**
 * Certify the solution's lift.
 *
 * # Safety
 * `solution` must be a live handle; `out` must be writable.
 */
enum SocStatus soc_solution_certify(const struct SocSolution *solution,
                                    bool require_hm,
                                    struct SocReport **out);

/**
 * # Safety
 * `report` must come from `soc_solution_certify` or be null.
 */
void soc_report_free(struct SocReport *report);

/**
 * Writes whether every required section passed, and the adjoint and
 * averaged-gradient residuals (the latter 0 when absent).
 *
 * # Safety
 * `report` must be a live handle; outputs must be writable.
 */
enum SocStatus soc_report_summary(const struct SocReport *report,
                                  bool *all_pass,
                                  double *ae,
                                  double *ahg);

/**
 * Report as TOML text; release with `soc_string_free`.
 *
 * # Safety
 * `report` must be a live handle; `out` must be writable.
 */
enum SocStatus soc_report_toml(const struct SocReport *report, char **out);

/**
 * # Safety
 * `s` must come from this library or be null.
 */
void soc_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SAMPLED_OCP_H */
