#ifndef PNPBO_H
#define PNPBO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum PnpboStatus {
  PNPBO_STATUS_OK = 0,
  PNPBO_STATUS_NULL_POINTER = 1,
  PNPBO_STATUS_INVALID_ARGUMENT = 2,
  PNPBO_STATUS_PARSE = 3,
  PNPBO_STATUS_IO = 4,
  PNPBO_STATUS_DIVERGED = 5,
  PNPBO_STATUS_INFEASIBLE = 6,
  PNPBO_STATUS_NO_CONVERGENCE = 7,
  PNPBO_STATUS_STATE = 8,
  PNPBO_STATUS_BUFFER_SIZE = 9,
  PNPBO_STATUS_PANIC = 10,
} PnpboStatus;

// A constructed bilevel problem.
typedef struct PnpboProblem PnpboProblem;

// A running solver; stepped against the problem it was created for.
typedef struct PnpboSolver PnpboSolver;

typedef struct PnpboDims {
  size_t n;
  size_t m;
  size_t dim_x;
  size_t dim_y;
} PnpboDims;

typedef struct PnpboSteps {
  double alpha;
  double beta;
  double gamma;
} PnpboSteps;

// Solver settings. Fill with [`pnpbo_solver_options_default`] first.
typedef struct PnpboSolverOptions {
  struct PnpboSteps steps;
  // Moving-average weight, used by the MA presets only.
  double rho;
  // Clipping radius of the implicit variable.
  double radius;
  size_t batch_f;
  size_t batch_g;
  uint64_t seed;
} PnpboSolverOptions;

typedef struct PnpboSmoothness {
  double lf;
  double lg1;
  double lg2;
  double mu;
  double cf;
} PnpboSmoothness;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *pnpbo_version(void);

// Copies the calling thread's last error message into `buf` (truncated,
// always NUL-terminated when `len > 0`). Returns the full message length
// plus one, so a second call with that size gets the whole text.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
size_t pnpbo_last_error(char *buf, size_t len);

// Builds a problem from a TOML table such as
// `kind = "quadratic"` followed by its fields. `data_root` may be null.
//
// # Safety
// `toml` must be a NUL-terminated string, `data_root` null or one, and
// `out` a valid pointer.
enum PnpboStatus pnpbo_problem_from_toml(const char *toml,
                                         const char *data_root,
                                         struct PnpboProblem **out);

// Builds both the problem and a ready solver from a full run configuration.
//
// # Safety
// `toml` must be a NUL-terminated string; `problem_out` and `solver_out`
// valid pointers.
enum PnpboStatus pnpbo_run_from_toml(const char *toml,
                                     struct PnpboProblem **problem_out,
                                     struct PnpboSolver **solver_out);

// # Safety
// `problem` must be null or a handle from this library, not yet freed.
void pnpbo_problem_free(struct PnpboProblem *problem);

// # Safety
// `problem` must be a live handle and `out` a valid pointer.
enum PnpboStatus pnpbo_problem_dims(const struct PnpboProblem *problem, struct PnpboDims *out);

// Exact hypergradient at `x` and its squared norm (`grad_sq` may be null).
//
// # Safety
// `x` must hold `len_x` values, `grad` room for `len_grad`; both lengths
// must equal the problem's `dim_x`.
enum PnpboStatus pnpbo_hypergradient(const struct PnpboProblem *problem,
                                     const double *x,
                                     size_t len_x,
                                     double *grad,
                                     size_t len_grad,
                                     double *grad_sq);

// Preset defaults for `problem` with zero step sizes.
//
// # Safety
// `preset` must be a NUL-terminated name, `problem` a live handle and
// `out` a valid pointer.
enum PnpboStatus pnpbo_solver_options_default(const struct PnpboProblem *problem,
                                              const char *preset,
                                              struct PnpboSolverOptions *out);

// Starts a solver at the zero iterate.
//
// # Safety
// `problem` must be a live handle, `preset` a NUL-terminated name,
// `options` and `out` valid pointers.
enum PnpboStatus pnpbo_solver_new(const struct PnpboProblem *problem,
                                  const char *preset,
                                  const struct PnpboSolverOptions *options,
                                  struct PnpboSolver **out);

// # Safety
// `solver` must be null or a handle from this library, not yet freed.
void pnpbo_solver_free(struct PnpboSolver *solver);

// Advances `steps` iterations. On divergence the iterate stays at the
// last finite value and `PNPBO_STATUS_DIVERGED` is returned.
//
// # Safety
// Both handles must be live; `problem` must have the dimensions the
// solver was created with.
enum PnpboStatus pnpbo_solver_step(struct PnpboSolver *solver,
                                   const struct PnpboProblem *problem,
                                   uint64_t steps);

// Number of completed iterations, or 0 for a null handle.
//
// # Safety
// `solver` must be null or a live handle.
uint64_t pnpbo_solver_iteration(const struct PnpboSolver *solver);

// Copies the current iterate out; buffer lengths must match exactly.
//
// # Safety
// Each pointer must hold room for its stated length.
enum PnpboStatus pnpbo_solver_iterate(const struct PnpboSolver *solver,
                                      double *x,
                                      size_t len_x,
                                      double *y,
                                      size_t len_y,
                                      double *z,
                                      size_t len_z);

// Sample accesses so far, summed over channels.
//
// # Safety
// `solver` must be a live handle; `upper` and `lower` valid pointers.
enum PnpboStatus pnpbo_solver_samples(const struct PnpboSolver *solver,
                                      uint64_t *upper,
                                      uint64_t *lower);

// Largest certified constant step sizes for `preset`.
//
// # Safety
// `params` and `out` must be valid pointers, `preset` a NUL-terminated name.
enum PnpboStatus pnpbo_suggest_steps(const struct PnpboSmoothness *params,
                                     size_t n,
                                     size_t m,
                                     const char *preset,
                                     struct PnpboSteps *out);

// Checks `steps` against the conditions for `preset`; `feasible` gets 1 or 0.
//
// # Safety
// `params`, `steps` and `feasible` must be valid pointers, `preset` a
// NUL-terminated name.
enum PnpboStatus pnpbo_check_steps(const struct PnpboSmoothness *params,
                                   size_t n,
                                   size_t m,
                                   const char *preset,
                                   const struct PnpboSteps *steps,
                                   int32_t *feasible);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PNPBO_H */
