/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef EDGEWATT_H
#define EDGEWATT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EwStatus {
  EW_STATUS_OK = 0,
  EW_STATUS_NULL_POINTER = 1,
  EW_STATUS_INVALID_ARGUMENT = 2,
  EW_STATUS_DEGENERATE_FIT = 3,
  EW_STATUS_INVALID_INTERVAL = 4,
  EW_STATUS_IMPLAUSIBLE_READING = 5,
  EW_STATUS_IO = 6,
  EW_STATUS_PARSE = 7,
  EW_STATUS_SCHEMA_VERSION = 8,
  EW_STATUS_INTERNAL = 9,
} EwStatus;

// Fitted 4th-degree CPU load to power curve.
typedef struct EwCpuCurve EwCpuCurve;

// Fitted hardware/software offset model.
typedef struct EwOffsetModel EwOffsetModel;

// A trace loaded from disk.
typedef struct EwTrace EwTrace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failure on this thread, or null. Valid until the
// next edgewatt call on the same thread.
const char *ew_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *ew_version(void);

// Average power in mW between two readings of a wrapping energy counter.
enum EwStatus ew_power_from_counters(uint64_t prev_uj,
                                     int64_t prev_ms,
                                     uint64_t curr_uj,
                                     int64_t curr_ms,
                                     uint64_t max_uj,
                                     double ceiling_mw,
                                     double *out_mw);

// Receive rate between two interface counter snapshots. `width_bits` is
// 32 or 64.
enum EwStatus ew_throughput_from_counters(uint64_t prev_bytes,
                                          uint64_t prev_packets,
                                          int64_t prev_ms,
                                          uint64_t curr_bytes,
                                          uint64_t curr_packets,
                                          int64_t curr_ms,
                                          uint32_t width_bits,
                                          double *out_bps,
                                          double *out_pps);

// Fits `hw - sw = alpha * T + c` to `n` points.
enum EwStatus ew_offset_fit(const double *throughput_mbps,
                            const double *diff_mw,
                            size_t n,
                            struct EwOffsetModel **out);

// Slope in mW per Mbps; NaN for a null handle.
double ew_offset_alpha(const struct EwOffsetModel *model);

// Intercept in mW; NaN for a null handle.
double ew_offset_c(const struct EwOffsetModel *model);

// Hardware power predicted from software power and throughput; NaN for a
// null handle.
double ew_offset_predict(const struct EwOffsetModel *model, double p_sw_mw, double throughput_mbps);

void ew_offset_free(struct EwOffsetModel *model);

// Fits a 4th-degree polynomial of power against CPU load in [0, 1].
enum EwStatus ew_cpu_curve_fit(const double *load,
                               const double *power_mw,
                               size_t n,
                               struct EwCpuCurve **out);

// Power in mW at `load`; NaN for a null handle.
double ew_cpu_curve_eval(const struct EwCpuCurve *curve, double load);

// Copies the five coefficients, constant term first, into `out`.
enum EwStatus ew_cpu_curve_coefficients(const struct EwCpuCurve *curve, double *out);

void ew_cpu_curve_free(struct EwCpuCurve *curve);

// Splits host power across `n` processes by their CPU time in one window.
// `out_mw` receives one value per process.
enum EwStatus ew_attribute(double host_power_mw,
                           double idle_floor_mw,
                           const double *cpu_time_ms,
                           size_t n,
                           double *out_mw,
                           double *out_residual_mw);

// Energy per transmitted bit in nJ.
enum EwStatus ew_energy_per_bit(double power_mw, double throughput_mbps, double *out_nj);

// Loads and validates a JSONL trace.
enum EwStatus ew_trace_open(const char *path, struct EwTrace **out);

// Host-scope power samples of `meter_id` in the trace.
enum EwStatus ew_trace_sample_count(const struct EwTrace *trace, const char *meter_id, size_t *out);

// Phase count of the trace's plan.
enum EwStatus ew_trace_phase_count(const struct EwTrace *trace, size_t *out);

// Analysis report of the trace as a JSON string. Release it with
// [`ew_string_free`].
enum EwStatus ew_trace_report_json(const struct EwTrace *trace, char **out);

void ew_trace_free(struct EwTrace *trace);

void ew_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EDGEWATT_H */
