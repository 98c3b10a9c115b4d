#ifndef RISOPT_H
#define RISOPT_H

#include <stddef.h>
#include <stdint.h>

typedef enum RisoptStatus {
  RISOPT_STATUS_OK = 0,
  RISOPT_STATUS_NULL_POINTER = 1,
  RISOPT_STATUS_INVALID_ARGUMENT = 2,
  RISOPT_STATUS_CONFIG = 3,
  RISOPT_STATUS_INFEASIBLE = 4,
  RISOPT_STATUS_NUMERICAL = 5,
  RISOPT_STATUS_CONVERGENCE = 6,
  RISOPT_STATUS_BUFFER_TOO_SMALL = 7,
  RISOPT_STATUS_PANIC = 8,
} RisoptStatus;

typedef enum RisoptScale {
  RISOPT_SCALE_DESK = 0,
  RISOPT_SCALE_PAPER = 1,
} RisoptScale;

typedef enum RisoptObjective {
  RISOPT_OBJECTIVE_ENERGY_EFFICIENCY = 0,
  RISOPT_OBJECTIVE_SUM_RATE = 1,
} RisoptObjective;

typedef enum RisoptBaseline {
  RISOPT_BASELINE_FIXED = 0,
  RISOPT_BASELINE_ALL_RANDOM = 1,
  RISOPT_BASELINE_SAME_RANDOM = 2,
} RisoptBaseline;

// One channel realization.
typedef struct RisoptChannels RisoptChannels;

// System parameters plus solver settings.
typedef struct RisoptConfig RisoptConfig;

// Optimized beams and phases with their figures of merit.
typedef struct RisoptResult RisoptResult;

typedef struct RisoptComplex {
  double re;
  double im;
} RisoptComplex;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL. Valid until
// the next failing call on the same thread.
const char *risopt_last_error(void);

// Creates a configuration with the preset dimensions of `scale`.
enum RisoptStatus risopt_config_new(enum RisoptScale scale, struct RisoptConfig **out);

void risopt_config_free(struct RisoptConfig *cfg);

// Sets one system parameter by name, using the same keys as the CLI
// config file (`m`, `k`, `n`, `p_max_db`, `sigma2`, `r`, `rng_seed`, ...).
// The configuration is left unchanged on error.
enum RisoptStatus risopt_config_set(struct RisoptConfig *cfg, const char *key, const char *value);

enum RisoptStatus risopt_config_set_objective(struct RisoptConfig *cfg,
                                              enum RisoptObjective objective);

// Outer iteration cap; must be positive.
enum RisoptStatus risopt_config_set_max_iterations(struct RisoptConfig *cfg, size_t n_max);

// Antennas, users and elements per surface. Any output may be NULL.
enum RisoptStatus risopt_config_dims(const struct RisoptConfig *cfg,
                                     size_t *m,
                                     size_t *k,
                                     size_t *n);

// Draws channel realization `draw_index` from the configured seed.
enum RisoptStatus risopt_channels_draw(const struct RisoptConfig *cfg,
                                       uint64_t draw_index,
                                       struct RisoptChannels **out);

void risopt_channels_free(struct RisoptChannels *ch);

// Runs the alternating optimizer.
enum RisoptStatus risopt_optimize(const struct RisoptConfig *cfg,
                                  const struct RisoptChannels *ch,
                                  struct RisoptResult **out);

// Beamforming-only optimization with baseline phases drawn from `seed`.
enum RisoptStatus risopt_baseline(const struct RisoptConfig *cfg,
                                  const struct RisoptChannels *ch,
                                  enum RisoptBaseline kind,
                                  uint64_t seed,
                                  struct RisoptResult **out);

void risopt_result_free(struct RisoptResult *res);

// Sum rate in bit/s/Hz; NaN for a NULL handle.
double risopt_result_sum_rate(const struct RisoptResult *res);

// Energy efficiency in bit/s/Hz/W; NaN for a NULL handle.
double risopt_result_ee(const struct RisoptResult *res);

// Transmit power of the returned beams; NaN for a NULL handle.
double risopt_result_transmit_power(const struct RisoptResult *res);

// Outer iterations run; 0 for a NULL handle.
size_t risopt_result_iterations(const struct RisoptResult *res);

// Copies the 2N phases, first surface then second. `len` is the buffer
// length in entries.
enum RisoptStatus risopt_result_copy_phases(const struct RisoptResult *res,
                                            struct RisoptComplex *out,
                                            size_t len);

// Copies both M×K beam matrices column-major, first surface then second
// (2MK entries).
enum RisoptStatus risopt_result_copy_beams(const struct RisoptResult *res,
                                           struct RisoptComplex *out,
                                           size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RISOPT_H */
