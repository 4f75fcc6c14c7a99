#ifndef IRS_JOINT_H
#define IRS_JOINT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes for every fallible call.
 */
typedef enum IrsStatus {
  IRS_STATUS_OK = 0,
  IRS_STATUS_NULL_POINTER = 1,
  IRS_STATUS_INVALID_UTF8 = 2,
  IRS_STATUS_DOMAIN = 3,
  IRS_STATUS_DIMENSION = 4,
  IRS_STATUS_CONFIG = 5,
  IRS_STATUS_QOS_INFEASIBLE = 6,
  IRS_STATUS_POWER_INFEASIBLE = 7,
  IRS_STATUS_NON_CONVERGENCE = 8,
  IRS_STATUS_SINGULAR = 9,
  IRS_STATUS_ORACLE_REFUSED = 10,
  IRS_STATUS_UNKNOWN_SCHEME = 11,
  IRS_STATUS_IO = 12,
  IRS_STATUS_JSON = 13,
  IRS_STATUS_OUT_OF_RANGE = 14,
  IRS_STATUS_PANIC = 15,
} IrsStatus;

/**
 * Opaque channel realization.
 */
typedef struct IrsChannels IrsChannels;

/**
 * Opaque system configuration.
 */
typedef struct IrsConfig IrsConfig;

/**
 * Opaque trajectory of an alternating-optimization run.
 */
typedef struct IrsRunResult IrsRunResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if it succeeded.
 * The pointer stays valid until the next call into this library on the same thread.
 */
const char *irs_last_error_message(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *irs_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void irs_string_free(char *s);

/**
 * Desk-scale configuration (32 antennas, 4x4 IRS, 4 users).
 */
struct IrsConfig *irs_config_desk(void);

/**
 * Full-size configuration (256 antennas, 8x8 IRS, 16 users).
 */
struct IrsConfig *irs_config_paper_scale(void);

/**
 * Parses a JSON configuration with the field names of the Rust `SystemConfig`.
 *
 * # Safety
 * `json` must be a nul-terminated string; `out` must be writable.
 */
enum IrsStatus irs_config_from_json(const char *json, struct IrsConfig **out);

/**
 * Serializes a configuration to JSON; free the result with `irs_string_free`.
 *
 * # Safety
 * `config` must be a live handle; `out` must be writable.
 */
enum IrsStatus irs_config_to_json(const struct IrsConfig *config, char **out);

/**
 * Sets the noise power so that `10 log10(P / sigma^2) = snr_db`.
 *
 * # Safety
 * `config` must be a live handle.
 */
enum IrsStatus irs_config_set_snr_db(struct IrsConfig *config, double snr_db);

/**
 * Sets the transmit power in dBm, keeping the noise power.
 *
 * # Safety
 * `config` must be a live handle.
 */
enum IrsStatus irs_config_set_power_dbm(struct IrsConfig *config, double dbm);

/**
 * Sets the seed used for the initial IRS phases.
 *
 * # Safety
 * `config` must be a live handle.
 */
enum IrsStatus irs_config_set_seed(struct IrsConfig *config, uint64_t seed);

/**
 * # Safety
 * `config` must be null or a handle not yet freed.
 */
void irs_config_free(struct IrsConfig *config);

/**
 * Draws a channel realization; equal `(config, seed)` give identical channels.
 *
 * # Safety
 * `config` must be a live handle; `out` must be writable.
 */
enum IrsStatus irs_channels_generate(const struct IrsConfig *config,
                                     uint64_t seed,
                                     struct IrsChannels **out);

/**
 * Antenna, IRS element and user counts of a realization.
 *
 * # Safety
 * `channels` must be a live handle; the out pointers must be writable.
 */
enum IrsStatus irs_channels_dims(const struct IrsChannels *channels,
                                 uintptr_t *n_tx,
                                 uintptr_t *n_irs,
                                 uintptr_t *n_users);

/**
 * # Safety
 * `channels` must be null or a handle not yet freed.
 */
void irs_channels_free(struct IrsChannels *channels);

/**
 * Runs the full alternating optimization. A run stopped by an infeasible
 * block still yields a result holding the completed iterations; check
 * `irs_result_aborted`.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum IrsStatus irs_run_joint(const struct IrsConfig *config,
                             const struct IrsChannels *channels,
                             struct IrsRunResult **out);

/**
 * Final sum rate of one scheme (`joint`, `partial_f_fixed`, `random_theta`,
 * `uniform_pa`, `no_irs`).
 *
 * # Safety
 * Handles must be live; `scheme` nul-terminated; `out_rate` writable.
 */
enum IrsStatus irs_run_scheme(const struct IrsConfig *config,
                              const struct IrsChannels *channels,
                              const char *scheme,
                              double *out_rate);

/**
 * Number of recorded iterations, including the initial point.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
uintptr_t irs_result_len(const struct IrsRunResult *result);

/**
 * 1 if the run stopped early on an infeasible block, 0 otherwise.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
int32_t irs_result_aborted(const struct IrsRunResult *result);

/**
 * Sum rate (bit/s/Hz) after iteration `index`.
 *
 * # Safety
 * `result` must be a live handle; `out` writable.
 */
enum IrsStatus irs_result_sum_rate(const struct IrsRunResult *result, uintptr_t index, double *out);

/**
 * Iteration records as JSON lines; free with `irs_string_free`.
 *
 * # Safety
 * `result` must be a live handle; `out` writable.
 */
enum IrsStatus irs_result_to_json_lines(const struct IrsRunResult *result, char **out);

/**
 * Reason the run stopped early, or null when it completed.
 * Valid while the result handle lives.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
char *irs_result_abort_reason(const struct IrsRunResult *result);

/**
 * # Safety
 * `result` must be null or a handle not yet freed.
 */
void irs_result_free(struct IrsRunResult *result);

/**
 * Runs the sweep described by a JSON experiment spec, writes the CSV to
 * `out_path` (the spec's own path when null) and returns the CSV text.
 *
 * # Safety
 * `spec_json` nul-terminated; `out_path` null or nul-terminated; `out_csv` writable.
 */
enum IrsStatus irs_run_sweep(const char *spec_json, const char *out_path, char **out_csv);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IRS_JOINT_H */
