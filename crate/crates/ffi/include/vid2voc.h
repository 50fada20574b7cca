#ifndef VID2VOC_H
#define VID2VOC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. Values 2 to 5 match the command-line exit codes.
typedef enum V2vStatus {
  V2V_STATUS_OK = 0,
  V2V_STATUS_NOT_FOUND = 2,
  V2V_STATUS_INVALID_DATA = 3,
  V2V_STATUS_CONFIG_MISMATCH = 4,
  V2V_STATUS_NUMERICAL = 5,
  V2V_STATUS_NULL_ARGUMENT = 6,
  V2V_STATUS_BUFFER_TOO_SMALL = 7,
  V2V_STATUS_PANIC = 8,
} V2vStatus;

// Arrays of a network output, in `[frame, coefficient, sub-frame]` order.
typedef enum V2vField {
  // Spectral envelope, 75 x 60 x 8.
  V2V_FIELD_SE = 0,
  // Masked band aperiodicity complement, 75 x 5 x 8.
  V2V_FIELD_NAP = 1,
  // Masked normalized F0, 75 x 8.
  V2V_FIELD_F0 = 2,
  // Binary voicing, 75 x 8.
  V2V_FIELD_VUV = 3,
  // Character log-probabilities, 75 x 28.
  V2V_FIELD_VSR = 4,
} V2vField;

// A trained network.
typedef struct V2vModel V2vModel;

// The result of one forward pass.
typedef struct V2vOutput V2vOutput;

// Feature pipeline with normalization statistics, for resynthesis.
typedef struct V2vVocoder V2vVocoder;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the last error message of this thread into `buf` as a
// NUL-terminated string, truncating to `len - 1` bytes. Returns the full
// message length in bytes.
//
// # Safety
// `buf` must be null or valid for `len` byte writes.
size_t v2v_last_error(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *v2v_version(void);

// Loads a checkpoint file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` valid for one write.
enum V2vStatus v2v_model_load(const char *path, struct V2vModel **out);

// # Safety
// `model` must be null or a handle from [`v2v_model_load`] not yet freed.
void v2v_model_free(struct V2vModel *model);

// Expected clip geometry: frames, channels, height, width.
//
// # Safety
// `model` must be a live handle; `dims` valid for 4 writes.
enum V2vStatus v2v_model_input_dims(const struct V2vModel *model, size_t *dims);

// Runs the network on one clip of `frames * channels * height * width`
// values in `[-1, 1]`, row-major.
//
// # Safety
// `model` must be a live handle, `video` valid for `len` reads and `out`
// for one write.
enum V2vStatus v2v_model_forward(const struct V2vModel *model,
                                 const float *video,
                                 size_t len,
                                 struct V2vOutput **out);

// # Safety
// `out` must be null or a handle from [`v2v_model_forward`] not yet freed.
void v2v_output_free(struct V2vOutput *out);

// Number of values in a field, or 0 for a null handle.
//
// # Safety
// `out` must be null or a live handle.
size_t v2v_output_len(const struct V2vOutput *out, enum V2vField field);

// Copies a field into `buf`, which must hold [`v2v_output_len`] values.
//
// # Safety
// `out` must be a live handle and `buf` valid for `len` writes.
enum V2vStatus v2v_output_copy(const struct V2vOutput *out,
                               enum V2vField field,
                               double *buf,
                               size_t len);

// Best-path transcript of an output as a NUL-terminated string. `needed`
// receives the byte count including the terminator; when `len` is
// smaller nothing is written and the status is `BufferTooSmall`.
//
// # Safety
// `out` must be a live handle, `buf` valid for `len` writes and `needed`
// for one write.
enum V2vStatus v2v_output_transcript(const struct V2vOutput *out,
                                     char *buf,
                                     size_t len,
                                     size_t *needed);

// Builds the default feature pipeline with statistics loaded from a
// `VST1` file.
//
// # Safety
// `stats_path` must be a NUL-terminated string; `out` valid for one write.
enum V2vStatus v2v_vocoder_new(const char *stats_path, struct V2vVocoder **out);

// # Safety
// `v` must be null or a handle from [`v2v_vocoder_new`] not yet freed.
void v2v_vocoder_free(struct V2vVocoder *v);

// Audio samples a vocoder produces for an output (frames times hop).
//
// # Safety
// Both arguments must be null or live handles.
size_t v2v_vocoder_output_len(const struct V2vVocoder *v, const struct V2vOutput *out);

// Resynthesizes an output to audio at the vocoder sample rate.
//
// # Safety
// Handles must be live; `samples` valid for `len` writes.
enum V2vStatus v2v_vocoder_synthesize(const struct V2vVocoder *v,
                                      const struct V2vOutput *out,
                                      double *samples,
                                      size_t len);

// ESTOI between two equally sampled signals.
//
// # Safety
// `clean` and `degraded` must be valid for `len` reads; `score` for one
// write.
enum V2vStatus v2v_estoi(const double *clean,
                         const double *degraded,
                         size_t len,
                         uint32_t sample_rate,
                         double *score);

// CTC loss of `labels` under row-major log-probabilities
// `[steps x classes]`, with its gradient written to `grad` (same size,
// may be null).
//
// # Safety
// Pointers must be valid for the stated counts; `loss` for one write.
enum V2vStatus v2v_ctc_loss(const double *log_probs,
                            size_t steps,
                            size_t classes,
                            const size_t *labels,
                            size_t num_labels,
                            size_t blank,
                            double *loss,
                            double *grad);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VID2VOC_H */
