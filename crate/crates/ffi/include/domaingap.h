#ifndef DOMAINGAP_H
#define DOMAINGAP_H

/* Generated by cbindgen from the domaingap-ffi crate; edit the Rust source instead. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result of every fallible call in this interface.
 */
typedef enum dg_status {
  DG_OK = 0,
  /*
   A required pointer argument was null.
   */
  DG_ERR_NULL_ARGUMENT = 1,
  /*
   Invalid parameter values (levels, direction, class id, sizes).
   */
  DG_ERR_CONFIG = 2,
  /*
   The data itself cannot be processed (absent class, constant input,
   mismatched extents).
   */
  DG_ERR_DATA = 3,
  /*
   Reading or parsing a file failed.
   */
  DG_ERR_IO = 4,
  /*
   An internal invariant broke; report this as a bug.
   */
  DG_ERR_INTERNAL = 5,
} dg_status;

/*
 A loaded translator pair; create with dg_translator_load, release with
 dg_translator_free.
 */
typedef struct dg_translator dg_translator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Explanation of the most recent failure on this thread. Empty until an
 error occurs; the pointer is invalidated by the next failing call.
 */
const char *dg_last_error_message(void);

/*
 Library version as a static string.
 */
const char *dg_version(void);

/*
 Number of bins written by dg_hue_histogram.
 */
size_t dg_hue_bins(void);

/*
 Number of semantic classes the library models.
 */
size_t dg_num_classes(void);

/*
 Normalized hue histogram of one class. Writes `dg_hue_bins()` doubles to
 `bins`; `pixel_count` and `excluded_count` are optional outputs for the
 number of chromatic pixels binned and achromatic pixels skipped.

 # Safety
 `rgb` must point to `3 * width * height` doubles, `labels` to
 `width * height` bytes, and `bins` to `dg_hue_bins()` doubles.
 */
enum dg_status dg_hue_histogram(const double *rgb,
                                const uint8_t *labels,
                                size_t width,
                                size_t height,
                                uint8_t class_id,
                                double *bins,
                                uint64_t *pixel_count,
                                uint64_t *excluded_count);

/*
 Texture statistics of one class: gray-level co-occurrence over
 horizontally adjacent same-class pixels, reduced to four features
 written to `features` in the order contrast, homogeneity, energy,
 entropy.

 # Safety
 `rgb` must point to `3 * width * height` doubles, `labels` to
 `width * height` bytes, and `features` to 4 doubles.
 */
enum dg_status dg_haralick(const double *rgb,
                           const uint8_t *labels,
                           size_t width,
                           size_t height,
                           uint8_t class_id,
                           size_t levels,
                           double *features);

/*
 Sample Pearson correlation of two length-`n` vectors. Constant input has
 no defined correlation and yields DG_ERR_DATA.

 # Safety
 `a` and `b` must point to `n` doubles each; `out` to one double.
 */
enum dg_status dg_pearson(const double *a, const double *b, size_t n, double *out);

/*
 Intersection-over-union from flat prediction/truth id buffers.
 `per_class` receives `classes` values; classes absent from both
 prediction and truth are written as NaN and skipped by the mean.
 `mean` is NaN when every class is absent. Either output may be null.

 # Safety
 `predicted` and `truth` must point to `n_pixels` bytes each;
 `per_class`, when non-null, to `classes` doubles; `mean`, when
 non-null, to one double.
 */
enum dg_status dg_mean_iou(const uint8_t *predicted,
                           const uint8_t *truth,
                           size_t n_pixels,
                           size_t classes,
                           double *per_class,
                           double *mean);

/*
 Loads a translator checkpoint from `path` (NUL-terminated UTF-8) and
 stores the new handle in `*out`.

 # Safety
 `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum dg_status dg_translator_load(const char *path, struct dg_translator **out);

/*
 Side length of the square images a loaded translator accepts.

 # Safety
 `handle` must come from dg_translator_load and `out` be non-null.
 */
enum dg_status dg_translator_image_size(const struct dg_translator *handle, size_t *out);

/*
 Runs one image through the translator. `direction` 0 maps domain X to Y,
 1 maps Y to X. `rgb_in` and `rgb_out` are planar buffers of
 `3 * width * height` doubles; extents must match the translator's
 image size.

 # Safety
 `handle` must come from dg_translator_load; buffer sizes as above.
 */
enum dg_status dg_translate(struct dg_translator *handle,
                            const double *rgb_in,
                            size_t width,
                            size_t height,
                            int direction,
                            double *rgb_out);

/*
 Releases a translator handle. Null is a no-op.

 # Safety
 `handle` must be null or a pointer from dg_translator_load, released
 exactly once.
 */
void dg_translator_free(struct dg_translator *handle);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DOMAINGAP_H */
