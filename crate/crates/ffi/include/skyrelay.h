#ifndef SKYRELAY_H
#define SKYRELAY_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SkyrelayStatus {
  SKYRELAY_STATUS_OK = 0,
  SKYRELAY_STATUS_NULL_POINTER = 1,
  SKYRELAY_STATUS_INVALID_ARGUMENT = 2,
  SKYRELAY_STATUS_CONFIG = 3,
  SKYRELAY_STATUS_INVALID_COUNT = 4,
  SKYRELAY_STATUS_UNKNOWN_SCENARIO = 5,
  SKYRELAY_STATUS_UNKNOWN_FIGURE = 6,
  SKYRELAY_STATUS_TRACE = 7,
  SKYRELAY_STATUS_IO = 8,
  SKYRELAY_STATUS_OUT_OF_RANGE = 9,
  SKYRELAY_STATUS_PANIC = 10,
} SkyrelayStatus;

typedef enum SkyrelayScenario {
  SKYRELAY_SCENARIO_MFF = 0,
  SKYRELAY_SCENARIO_BFF = 1,
  SKYRELAY_SCENARIO_BFA = 2,
  SKYRELAY_SCENARIO_BAO = 3,
} SkyrelayScenario;

// Opaque sweep configuration.
typedef struct SkyrelayConfig SkyrelayConfig;

// Opaque sweep result.
typedef struct SkyrelaySweep SkyrelaySweep;

typedef struct SkyrelayLinkCounters {
  uint64_t offered;
  uint64_t delivered;
  uint64_t dropped_overflow;
  uint64_t dropped_channel;
  uint64_t in_flight;
} SkyrelayLinkCounters;

// One sweep cell. Latencies are in seconds and NaN when nothing was
// delivered on that hop during the measurement window.
typedef struct SkyrelayRecord {
  enum SkyrelayScenario scenario;
  uint32_t n_vehicles;
  uint32_t fps;
  uint64_t seed;
  double per_user_throughput_bps;
  double latency_l1_s;
  double latency_l2_s;
  double latency_total_s;
  double reliability;
  struct SkyrelayLinkCounters uplink;
  struct SkyrelayLinkCounters downlink;
} SkyrelayRecord;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the last failed call on this thread, or NULL. The
// pointer stays valid until the next failing call on the same thread.
const char *skyrelay_last_error(void);

// Library version as a static NUL-terminated string.
const char *skyrelay_version(void);

// Default configuration: all four scenarios, N = 4..21, 15 and 30 FPS,
// seeds 1..5, 15 s per cell, calibrated link rates.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum SkyrelayStatus skyrelay_config_new(struct SkyrelayConfig **out);

// Parses a TOML configuration (same format as the CLI's `--config`).
//
// # Safety
// `toml` must be a NUL-terminated string; `out` as for [`skyrelay_config_new`].
enum SkyrelayStatus skyrelay_config_from_toml(const char *toml, struct SkyrelayConfig **out);

// Canned sweep for `fig3a`, `fig3b`, `fig3c` or `fig4`.
//
// # Safety
// `name` must be a NUL-terminated string; `out` as for [`skyrelay_config_new`].
enum SkyrelayStatus skyrelay_config_from_figure(const char *name, struct SkyrelayConfig **out);

// # Safety
// `cfg` must be NULL or a handle from this library not yet freed.
void skyrelay_config_free(struct SkyrelayConfig *cfg);

// `list` holds [`SkyrelayScenario`] codes.
//
// # Safety
// `cfg` must be a live handle; `list` must point to `len` readable values.
enum SkyrelayStatus skyrelay_config_set_scenarios(struct SkyrelayConfig *cfg,
                                                  const uint32_t *list,
                                                  size_t len);

// # Safety
// `cfg` must be a live handle; `list` must point to `len` readable values.
enum SkyrelayStatus skyrelay_config_set_vehicles(struct SkyrelayConfig *cfg,
                                                 const uint32_t *list,
                                                 size_t len);

// # Safety
// `cfg` must be a live handle; `list` must point to `len` readable values.
enum SkyrelayStatus skyrelay_config_set_fps(struct SkyrelayConfig *cfg,
                                            const uint32_t *list,
                                            size_t len);

// # Safety
// `cfg` must be a live handle; `list` must point to `len` readable values.
enum SkyrelayStatus skyrelay_config_set_seeds(struct SkyrelayConfig *cfg,
                                              const uint64_t *list,
                                              size_t len);

// Simulated seconds per cell and the leading warm-up excluded from
// latency and throughput.
//
// # Safety
// `cfg` must be a live handle.
enum SkyrelayStatus skyrelay_config_set_time(struct SkyrelayConfig *cfg,
                                             double sim_time_s,
                                             double warmup_s);

// Link rates in bit/s and per-packet loss probabilities.
//
// # Safety
// `cfg` must be a live handle.
enum SkyrelayStatus skyrelay_config_set_link(struct SkyrelayConfig *cfg,
                                             double uplink_rate_bps,
                                             double downlink_rate_bps,
                                             double loss_prob_ul,
                                             double loss_prob_dl);

// Per-bearer buffer capacities in bytes.
//
// # Safety
// `cfg` must be a live handle.
enum SkyrelayStatus skyrelay_config_set_buffers(struct SkyrelayConfig *cfg,
                                                uint64_t uplink_bytes,
                                                uint64_t downlink_bytes);

// Worker threads for sweeps; 0 means all cores.
//
// # Safety
// `cfg` must be a live handle.
enum SkyrelayStatus skyrelay_config_set_parallelism(struct SkyrelayConfig *cfg, size_t threads);

// Number of cells a sweep of `cfg` would run.
//
// # Safety
// `cfg` must be a live handle; `out` must be writable.
enum SkyrelayStatus skyrelay_config_cell_count(const struct SkyrelayConfig *cfg, size_t *out);

// Runs a single cell with the settings of `cfg`. The sweep axes of `cfg`
// are ignored; `scenario` is a [`SkyrelayScenario`] code.
//
// # Safety
// `cfg` must be a live handle; `out` must be writable.
enum SkyrelayStatus skyrelay_run_cell(const struct SkyrelayConfig *cfg,
                                      uint32_t scenario,
                                      uint32_t n_vehicles,
                                      uint32_t fps,
                                      uint64_t seed,
                                      struct SkyrelayRecord *out);

// Runs every cell of `cfg`. Records are ordered by scenario, N, FPS, seed.
//
// # Safety
// `cfg` must be a live handle; `out` must be writable.
enum SkyrelayStatus skyrelay_sweep_run(const struct SkyrelayConfig *cfg,
                                       struct SkyrelaySweep **out);

// Number of records; 0 for NULL.
//
// # Safety
// `sweep` must be NULL or a live handle.
size_t skyrelay_sweep_len(const struct SkyrelaySweep *sweep);

// # Safety
// `sweep` must be a live handle; `out` must be writable.
enum SkyrelayStatus skyrelay_sweep_get(const struct SkyrelaySweep *sweep,
                                       size_t index,
                                       struct SkyrelayRecord *out);

// Hex SHA-256 of the configuration that produced the sweep. Owned by the
// sweep; valid until it is freed.
//
// # Safety
// `sweep` must be NULL or a live handle.
const char *skyrelay_sweep_config_hash(const struct SkyrelaySweep *sweep);

// Writes the CSV (all columns) to `path` and provenance next to it.
//
// # Safety
// `sweep` must be a live handle; `path` a NUL-terminated string.
enum SkyrelayStatus skyrelay_sweep_write_csv(const struct SkyrelaySweep *sweep, const char *path);

// # Safety
// `sweep` must be NULL or a handle from this library not yet freed.
void skyrelay_sweep_free(struct SkyrelaySweep *sweep);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SKYRELAY_H */
