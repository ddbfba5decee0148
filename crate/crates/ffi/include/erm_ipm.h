#ifndef ERM_IPM_H
#define ERM_IPM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ErmMode {
  ERM_MODE_EXACT = 0,
  ERM_MODE_SKETCHED = 1,
} ErmMode;

typedef enum ErmStatus {
  ERM_STATUS_OK = 0,
  ERM_STATUS_NULL_POINTER = 1,
  ERM_STATUS_INVALID_ARGUMENT = 2,
  ERM_STATUS_VALIDATION = 3,
  ERM_STATUS_DIMENSION_MISMATCH = 4,
  ERM_STATUS_NOT_POSITIVE_DEFINITE = 5,
  ERM_STATUS_NUMERICAL = 6,
  ERM_STATUS_INVARIANT = 7,
  ERM_STATUS_IO = 8,
  // A Rust panic was caught at the boundary.
  ERM_STATUS_INTERNAL = 9,
} ErmStatus;

// A loaded standard-form instance.
typedef struct ErmProblem ErmProblem;

// Result of a solve.
typedef struct ErmSolution ErmSolution;

// Leverage-score sparsifier under row insertions and deletions.
typedef struct ErmSparsifier ErmSparsifier;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the next failing call.
const char *erm_last_error(void);

// Library version as a static nul-terminated string.
const char *erm_version(void);

// Loads an instance file.
//
// # Safety
// `path` must be a nul-terminated string and `out` a valid pointer.
enum ErmStatus erm_problem_load(const char *path, struct ErmProblem **out);

// Parses an instance from JSON text. Sidecar paths resolve against the working directory.
//
// # Safety
// `json` must be a nul-terminated string and `out` a valid pointer.
enum ErmStatus erm_problem_from_json(const char *json, struct ErmProblem **out);

// Writes `n` (variables), `d` (constraints) and `m` (blocks). Any output may be null.
//
// # Safety
// `problem` must come from this library; non-null outputs must be valid.
enum ErmStatus erm_problem_dims(const struct ErmProblem *problem, size_t *n, size_t *d, size_t *m);

// # Safety
// `problem` must be null or come from this library and not be used afterwards.
void erm_problem_free(struct ErmProblem *problem);

// Solves to additive accuracy `eps` with the aggressive parameter profile.
//
// # Safety
// `problem` must come from this library and `out` must be valid.
enum ErmStatus erm_solve(const struct ErmProblem *problem,
                         double eps,
                         enum ErmMode mode,
                         uint64_t seed,
                         struct ErmSolution **out);

// # Safety
// `solution` must come from this library; `objective` must be valid.
enum ErmStatus erm_solution_objective(const struct ErmSolution *solution, double *objective);

// Iteration count and whether the target accuracy was reached (1) or the cap hit (0).
//
// # Safety
// `solution` must come from this library; non-null outputs must be valid.
enum ErmStatus erm_solution_status(const struct ErmSolution *solution,
                                   size_t *iterations,
                                   int32_t *converged);

// Copies the primal point into `buf`. With `buf` null and `len` 0 only the length is reported.
//
// # Safety
// `buf` must hold `len` doubles; `required` may be null.
enum ErmStatus erm_solution_x(const struct ErmSolution *solution,
                              double *buf,
                              size_t len,
                              size_t *required);

// Copies the dual point, as [`erm_solution_x`].
//
// # Safety
// `buf` must hold `len` doubles; `required` may be null.
enum ErmStatus erm_solution_y(const struct ErmSolution *solution,
                              double *buf,
                              size_t len,
                              size_t *required);

// # Safety
// `solution` must be null or come from this library and not be used afterwards.
void erm_solution_free(struct ErmSolution *solution);

// Exact leverage scores of the row-major `rows x cols` matrix `a`.
//
// # Safety
// `a` must hold `rows * cols` doubles and `out` `rows` doubles.
enum ErmStatus erm_exact_leverage(const double *a, size_t rows, size_t cols, double *out);

// New empty sparsifier over rows of width `dim` with squared row norms at most `kappa`.
//
// # Safety
// `out` must be valid.
enum ErmStatus erm_sparsifier_new(size_t dim,
                                  double kappa,
                                  uint64_t seed,
                                  struct ErmSparsifier **out);

// Inserts `count` row-major rows and writes their ids to `ids`.
//
// # Safety
// `rows` must hold `count * dim` doubles and `ids` `count` values.
enum ErmStatus erm_sparsifier_insert(struct ErmSparsifier *sparsifier,
                                     const double *rows,
                                     size_t count,
                                     size_t dim,
                                     uint64_t *ids);

// Deletes the row with id `id`.
//
// # Safety
// `sparsifier` must come from this library.
enum ErmStatus erm_sparsifier_delete(struct ErmSparsifier *sparsifier, uint64_t id);

// Current leverage-score overestimate of a live row.
//
// # Safety
// `sparsifier` must come from this library and `out` must be valid.
enum ErmStatus erm_sparsifier_overestimate(const struct ErmSparsifier *sparsifier,
                                           uint64_t id,
                                           double *out);

// Number of live rows.
//
// # Safety
// `sparsifier` must come from this library and `out` must be valid.
enum ErmStatus erm_sparsifier_len(const struct ErmSparsifier *sparsifier, size_t *out);

// # Safety
// `sparsifier` must be null or come from this library and not be used afterwards.
void erm_sparsifier_free(struct ErmSparsifier *sparsifier);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ERM_IPM_H */
