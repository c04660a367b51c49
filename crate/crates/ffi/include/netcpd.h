#ifndef NETCPD_H
#define NETCPD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum NetcpdStatus {
  NETCPD_STATUS_OK = 0,
  NETCPD_STATUS_NULL_POINTER = 1,
  NETCPD_STATUS_INVALID_ARGUMENT = 2,
  // The detector has alarmed and takes no further frames.
  NETCPD_STATUS_ALREADY_ALARMED = 3,
  // No alarm has been raised yet.
  NETCPD_STATUS_NO_ALARM = 4,
  // A window has zero variance.
  NETCPD_STATUS_DEGENERATE = 5,
  // Power iteration failed to converge.
  NETCPD_STATUS_NO_CONVERGENCE = 6,
  NETCPD_STATUS_PANIC = 7,
} NetcpdStatus;

typedef enum NetcpdSimilarity {
  NETCPD_SIMILARITY_PEARSON = 0,
  NETCPD_SIMILARITY_INNER_PRODUCT = 1,
  NETCPD_SIMILARITY_NEG_EUCLIDEAN = 2,
} NetcpdSimilarity;

typedef enum NetcpdIsolationMethod {
  NETCPD_ISOLATION_METHOD_BRUTE_FORCE = 0,
  NETCPD_ISOLATION_METHOD_SPECTRAL = 1,
  NETCPD_ISOLATION_METHOD_SPECTRAL_REFINE = 2,
} NetcpdIsolationMethod;

// Online detector: window bank, snapshot builder and stopping rule.
typedef struct NetcpdDetector NetcpdDetector;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or NULL. The pointer
// stays valid until the next failing call on the same thread.
const char *netcpd_last_error_message(void);

// Creates a detector over `n` sensors with window `w`, complete graph,
// and threshold `b`; `w` must be at least 2. Writes the handle to `out`.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum NetcpdStatus netcpd_detector_new(size_t n,
                                      size_t w,
                                      enum NetcpdSimilarity kind,
                                      double b,
                                      struct NetcpdDetector **out);

// Releases a detector. NULL is ignored.
//
// # Safety
// `handle` must come from [`netcpd_detector_new`] and not be used again.
void netcpd_detector_free(struct NetcpdDetector *handle);

// Feeds the frame for tick `t`. `values` holds `n` readings; `missing` is
// NULL or `n` flags where nonzero marks a missing reading. Ticks must be
// consecutive. `alarmed` (may be NULL) receives whether this tick raised
// the alarm.
//
// # Safety
// `handle` must be a live detector; `values` and non-NULL `missing` must
// point to `n` elements.
enum NetcpdStatus netcpd_detector_push(struct NetcpdDetector *handle,
                                       uint64_t t,
                                       const double *values,
                                       const uint8_t *missing,
                                       size_t n,
                                       bool *alarmed);

// Copies the node statistics of the latest tick into `out` (`n` slots);
// nodes without a statistic are written as NaN.
//
// # Safety
// `handle` must be a live detector and `out` must hold `n` doubles.
enum NetcpdStatus netcpd_detector_statistics(const struct NetcpdDetector *handle,
                                             double *out,
                                             size_t n);

// Stopping time and argmax node of the alarm, or [`NetcpdStatus::NoAlarm`].
//
// # Safety
// `handle` must be a live detector; non-NULL outputs must be writable.
enum NetcpdStatus netcpd_detector_stopping_time(const struct NetcpdDetector *handle,
                                                uint64_t *t,
                                                size_t *node);

// Pearson correlation of two length-`len` windows.
//
// # Safety
// `x` and `y` must point to `len` doubles; `out` must be writable.
enum NetcpdStatus netcpd_pearson(const double *x, const double *y, size_t len, double *out);

// Splits an `n x n` row-major similarity matrix into two groups. NaN
// entries are masked-out edges; the diagonal is ignored. Writes `+1` for
// anomalous and `-1` for normal nodes into `x_out` (`n` slots), the
// objective to `objective` (may be NULL), and the eigengap of the spectral
// methods to `eigengap` (may be NULL; NaN for brute force).
//
// # Safety
// `y` must point to `n * n` doubles and `x_out` to `n` bytes.
enum NetcpdStatus netcpd_isolate(const double *y,
                                 size_t n,
                                 enum NetcpdIsolationMethod method,
                                 uint64_t seed,
                                 int8_t *x_out,
                                 double *objective,
                                 double *eigengap);

// `KL(N(mu1, sigma1²) ‖ N(mu0, sigma0²))`.
//
// # Safety
// `out` must be writable.
enum NetcpdStatus netcpd_kl_gaussian(double mu0,
                                     double sigma0,
                                     double mu1,
                                     double sigma1,
                                     double *out);

// `ln(gamma) / (cut * kl)`, without the additive O(1) slack.
//
// # Safety
// `out` must be writable.
enum NetcpdStatus netcpd_edd_bound(double gamma, size_t cut, double kl, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NETCPD_H */
