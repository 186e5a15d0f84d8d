#ifndef FAIRLENS_H
#define FAIRLENS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FlStatus {
  FL_STATUS_OK = 0,
  FL_STATUS_NULL_POINTER = 1,
  FL_STATUS_INVALID_ARGUMENT = 2,
  FL_STATUS_IO = 3,
  FL_STATUS_FORMAT = 4,
  FL_STATUS_PRECONDITION = 5,
  // A panic was caught at the boundary.
  FL_STATUS_INTERNAL = 6,
} FlStatus;

// Sorted ITA samples of one image.
typedef struct FlDistribution FlDistribution;

// Fitted performance estimator.
typedef struct FlEstimator FlEstimator;

typedef struct FlLab {
  double l;
  double a;
  double b;
} FlLab;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null when the last call
// succeeded. The pointer stays valid until the next call on the same thread.
const char *fl_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *fl_version(void);

// # Safety
// `out` must be null or point to writable memory for one `FlLab`.
enum FlStatus fl_srgb_to_lab(uint8_t r, uint8_t g, uint8_t b, struct FlLab *out);

// ITA angle in degrees. Fails with `PRECONDITION` when `b == 0`.
//
// # Safety
// `out` must be null or point to a writable `double`.
enum FlStatus fl_ita(double l, double a, double b, double *out);

// Builds a distribution from raw ITA samples.
//
// # Safety
// `source_id` must be a NUL-terminated string, `samples` must point to `len`
// doubles and `out` must be writable.
enum FlStatus fl_distribution_new(const char *source_id,
                                  const double *samples,
                                  size_t len,
                                  struct FlDistribution **out);

// Builds a distribution from an interleaved RGB buffer of `width * height`
// pixels and a mask of the same size where non-zero bytes mark skin.
//
// # Safety
// `rgb` must hold `3 * width * height` bytes, `mask` `width * height` bytes;
// `source_id` must be a NUL-terminated string and `out` writable.
enum FlStatus fl_distribution_from_pixels(const char *source_id,
                                          uint32_t width,
                                          uint32_t height,
                                          const uint8_t *rgb,
                                          const uint8_t *mask,
                                          struct FlDistribution **out);

// Loads an image and its mask from disk. A null `source_id` uses the image
// file stem.
//
// # Safety
// Paths must be NUL-terminated strings, `source_id` null or NUL-terminated,
// `out` writable.
enum FlStatus fl_distribution_from_image(const char *image_path,
                                         const char *mask_path,
                                         const char *source_id,
                                         struct FlDistribution **out);

// # Safety
// `d` must be null or a handle from an `fl_distribution_*` constructor that
// has not been freed.
void fl_distribution_free(struct FlDistribution *d);

// # Safety
// `d` must be a live handle and `out` writable.
enum FlStatus fl_distribution_len(const struct FlDistribution *d, size_t *out);

// # Safety
// `d` must be a live handle and `out` writable.
enum FlStatus fl_distribution_median(const struct FlDistribution *d, double *out);

// Generalized inverse of the ECDF at `p` in `[0, 1]`.
//
// # Safety
// `d` must be a live handle and `out` writable.
enum FlStatus fl_distribution_quantile(const struct FlDistribution *d, double p, double *out);

// Copies up to `capacity` sorted samples into `buf` and stores the total
// count in `written`.
//
// # Safety
// `d` must be a live handle, `buf` must hold `capacity` doubles and
// `written` must be writable.
enum FlStatus fl_distribution_samples(const struct FlDistribution *d,
                                      double *buf,
                                      size_t capacity,
                                      size_t *written);

// Unsigned one-dimensional Wasserstein distance.
//
// # Safety
// Both handles must be live and `out` writable.
enum FlStatus fl_wasserstein1(const struct FlDistribution *a,
                              const struct FlDistribution *b,
                              double *out);

// Signed distance of `other` from `base`: negative when the median of
// `other` does not exceed the median of `base`.
//
// # Safety
// Both handles must be live and `out` writable.
enum FlStatus fl_signed_distance(const struct FlDistribution *base,
                                 const struct FlDistribution *other,
                                 double *out);

// Parses an estimator from its JSON form.
//
// # Safety
// `json` must be a NUL-terminated string and `out` writable.
enum FlStatus fl_estimator_from_json(const char *json, struct FlEstimator **out);

// Reads an estimator JSON file.
//
// # Safety
// `path` must be a NUL-terminated string and `out` writable.
enum FlStatus fl_estimator_load(const char *path, struct FlEstimator **out);

// # Safety
// `e` must be null or a live estimator handle.
void fl_estimator_free(struct FlEstimator *e);

// # Safety
// `e` must be a live handle and `out` writable.
enum FlStatus fl_estimator_degree(const struct FlEstimator *e, size_t *out);

// Predicted performance at signed distance `d`, clamped to `[0, 1]`.
//
// # Safety
// `e` must be a live handle and `out` writable.
enum FlStatus fl_estimator_predict(const struct FlEstimator *e, double d, double *out);

// Softmax of `1 - eps_i` over `n` predicted performances, written to `out`.
//
// # Safety
// `eps` and `out` must each hold `n` doubles.
enum FlStatus fl_penalty_weights(const double *eps, size_t n, double *out);

// Binary cross-entropy of one score with the score clamped to
// `[floor, 1 - floor]`.
//
// # Safety
// `out` must be writable.
enum FlStatus fl_bce(double score, bool label, double floor, double *out);

// `alpha * sum_i BCE_i * w_i`. Labels are bytes, non-zero meaning positive.
//
// # Safety
// `scores`, `labels` and `weights` must each hold `n` elements and `out`
// must be writable.
enum FlStatus fl_weighted_bce(const double *scores,
                              const uint8_t *labels,
                              const double *weights,
                              size_t n,
                              double alpha,
                              double floor,
                              double *out);

// Loss of one batch at `epoch`: mean BCE while `epoch <= penalty_start_epoch`,
// then the penalty-weighted sum with weights from the estimator's
// predictions at `distances`.
//
// # Safety
// `scores`, `labels` and `distances` must each hold `n` elements, `e` must be
// a live handle and `out` writable.
enum FlStatus fl_distance_loss(const double *scores,
                               const uint8_t *labels,
                               const double *distances,
                               size_t n,
                               size_t epoch,
                               size_t penalty_start_epoch,
                               double penalty_weight,
                               const struct FlEstimator *e,
                               double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FAIRLENS_H */
