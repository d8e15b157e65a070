#ifndef QUADAMR_H
#define QUADAMR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call.
 */
typedef enum QuadamrStatus {
  QUADAMR_STATUS_OK = 0,
  QUADAMR_STATUS_NULL_POINTER = 1,
  QUADAMR_STATUS_INVALID_ARGUMENT = 2,
  QUADAMR_STATUS_CONFIG = 3,
  QUADAMR_STATUS_RUNTIME = 4,
  QUADAMR_STATUS_IO = 5,
  QUADAMR_STATUS_PANIC = 6,
} QuadamrStatus;

/**
 * Output formats accepted by `quadamr_simulation_write`.
 */
typedef enum QuadamrFormat {
  QUADAMR_FORMAT_PATCH_DUMP = 0,
  QUADAMR_FORMAT_VTK = 1,
} QuadamrFormat;

/**
 * Run configuration handle.
 */
typedef struct QuadamrConfig QuadamrConfig;

/**
 * Simulation handle. Owns its mesh, patches and simulated ranks.
 */
typedef struct QuadamrSimulation QuadamrSimulation;

/**
 * Snapshot of a simulation's state.
 */
typedef struct QuadamrInfo {
  uint64_t steps;
  double time;
  uint64_t leaves;
  uint64_t ranks;
  uint8_t min_level;
  uint8_t max_level;
  /**
   * Sum of cell values times cell area.
   */
  double mass;
  double max_cfl;
  double wall_seconds;
} QuadamrInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null after a
 * successful call. The pointer stays valid until the next call on the
 * same thread.
 */
const char *quadamr_last_error(void);

/**
 * Default configuration: the five-disk benchmark on one periodic block.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum QuadamrStatus quadamr_config_default(struct QuadamrConfig **out);

/**
 * Parses a TOML document with the same keys as the command-line config
 * file.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum QuadamrStatus quadamr_config_from_toml(const char *toml, struct QuadamrConfig **out);

/**
 * Parses command-line style arguments. `argv[0]` is the program name.
 *
 * # Safety
 * `argv` must point to `argc` NUL-terminated strings and `out` must be
 * a valid pointer.
 */
enum QuadamrStatus quadamr_config_from_args(int argc,
                                            const char *const *argv,
                                            struct QuadamrConfig **out);

/**
 * # Safety
 * `cfg` must be null or a handle from this library that was not yet freed.
 */
void quadamr_config_free(struct QuadamrConfig *cfg);

/**
 * Builds the initial mesh and patches. The configuration is copied and
 * may be freed afterwards.
 *
 * # Safety
 * `cfg` must be a live handle and `out` a valid pointer.
 */
enum QuadamrStatus quadamr_simulation_new(const struct QuadamrConfig *cfg,
                                          struct QuadamrSimulation **out);

/**
 * Advances one time step, regridding when due. Writes the step's CFL
 * number to `cfl` if it is not null.
 *
 * # Safety
 * `sim` must be a live handle; `cfl` must be null or valid.
 */
enum QuadamrStatus quadamr_simulation_step(struct QuadamrSimulation *sim, double *cfl);

/**
 * Runs the configured number of steps.
 *
 * # Safety
 * `sim` must be a live handle.
 */
enum QuadamrStatus quadamr_simulation_run(struct QuadamrSimulation *sim);

/**
 * # Safety
 * `sim` must be a live handle and `out` a valid pointer.
 */
enum QuadamrStatus quadamr_simulation_info(const struct QuadamrSimulation *sim,
                                           struct QuadamrInfo *out);

/**
 * Writes the current solution; `format` is a `QuadamrFormat` value.
 *
 * # Safety
 * `sim` must be a live handle and `path` a NUL-terminated string.
 */
enum QuadamrStatus quadamr_simulation_write(const struct QuadamrSimulation *sim,
                                            const char *path,
                                            int format);

/**
 * Writes the timing CSV (header and one row).
 *
 * # Safety
 * `sim` must be a live handle and `path` a NUL-terminated string.
 */
enum QuadamrStatus quadamr_simulation_write_timing(const struct QuadamrSimulation *sim,
                                                   const char *path);

/**
 * # Safety
 * `sim` must be null or a handle from this library that was not yet freed.
 */
void quadamr_simulation_free(struct QuadamrSimulation *sim);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QUADAMR_H */
