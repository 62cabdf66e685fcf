#ifndef SOFTWARP_H
#define SOFTWARP_H

/* Generated by cbindgen from the softwarp-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Outcome of a status-returning call.
typedef enum SwStatus {
  SW_STATUS_OK = 0,
  // A required pointer argument was NULL.
  SW_STATUS_NULL_POINTER = 1,
  // A string argument was not valid UTF-8.
  SW_STATUS_INVALID_UTF8 = 2,
  SW_STATUS_SHAPE_MISMATCH = 3,
  SW_STATUS_INVALID_ARGUMENT = 4,
  SW_STATUS_DEGENERATE_GEOMETRY = 5,
  SW_STATUS_SINGULAR_SYSTEM = 6,
  SW_STATUS_NON_FINITE = 7,
  SW_STATUS_FORMAT_ERROR = 8,
  SW_STATUS_IO_ERROR = 9,
  SW_STATUS_IMAGE_ERROR = 10,
  SW_STATUS_JSON_ERROR = 11,
  // The library panicked; state is consistent but the call did nothing.
  SW_STATUS_PANIC = 12,
} SwStatus;

// A dense image, values in `[0, 1]`, laid out row-major as `(y, x, channel)`.
typedef struct SwImage SwImage;

// A part-label map, one byte per pixel, labels below 20.
typedef struct SwSegmentation SwSegmentation;

// Per-part forward and backward transforms between two parsings.
typedef struct SwTransformSet SwTransformSet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string; never freed.
const char *sw_version(void);

// Message for this thread's most recent failure, or NULL after a success.
// The pointer stays valid until the next `sw_` call on the same thread.
const char *sw_last_error_message(void);

// Frees a string returned by this library. NULL is a no-op.
void sw_string_free(char *s);

// Reads an 8-bit gray or RGB PNG into an image handle.
struct SwImage *sw_image_read_png(const char *path);

// Writes an image handle as PNG (gray for one channel, RGB for three).
enum SwStatus sw_image_write_png(const struct SwImage *image, const char *path);

// Builds an image from `height * width * channels` doubles in `[0, 1]`,
// ordered row-major by `(y, x, channel)`.
struct SwImage *sw_image_new(size_t height, size_t width, size_t channels, const double *data);

size_t sw_image_height(const struct SwImage *image);

size_t sw_image_width(const struct SwImage *image);

size_t sw_image_channels(const struct SwImage *image);

// Copies the image's doubles into `out`, which must hold `len` values
// equal to `height * width * channels`.
enum SwStatus sw_image_copy_data(const struct SwImage *image, double *out, size_t len);

// Frees an image handle. NULL is a no-op.
void sw_image_free(struct SwImage *image);

// Reads a gray PNG whose pixel values are part labels below 20.
struct SwSegmentation *sw_segmentation_read_png(const char *path);

// Writes a segmentation handle as a gray PNG, pixel value = label.
enum SwStatus sw_segmentation_write_png(const struct SwSegmentation *seg, const char *path);

// Builds a segmentation from `height * width` row-major labels below 20.
struct SwSegmentation *sw_segmentation_new(size_t height, size_t width, const uint8_t *labels);

size_t sw_segmentation_height(const struct SwSegmentation *seg);

size_t sw_segmentation_width(const struct SwSegmentation *seg);

// Label at `(y, x)`, or -1 when the handle is NULL or the point is
// outside the map.
int32_t sw_segmentation_label_at(const struct SwSegmentation *seg, size_t y, size_t x);

// Frees a segmentation handle. NULL is a no-op.
void sw_segmentation_free(struct SwSegmentation *seg);

// Estimates affine+TPS transforms for every part label the two parsings
// share, with a `tps_rows` by `tps_cols` control grid for the residual.
struct SwTransformSet *sw_estimate_transforms(const struct SwSegmentation *condition,
                                              const struct SwSegmentation *target,
                                              size_t tps_rows,
                                              size_t tps_cols);

// Serializes a transform set to a JSON string; free with `sw_string_free`.
char *sw_transform_set_to_json(const struct SwTransformSet *set);

// Parses a transform set from the JSON produced by
// `sw_transform_set_to_json` or the `estimate` subcommand.
struct SwTransformSet *sw_transform_set_from_json(const char *json);

size_t sw_transform_set_part_count(const struct SwTransformSet *set);

// Label of the part at `index`, or -1 when out of range or NULL.
int32_t sw_transform_set_label_at(const struct SwTransformSet *set, size_t index);

// Frees a transform set handle. NULL is a no-op.
void sw_transform_set_free(struct SwTransformSet *set);

// Warps a whole image through the backward map stored for `label`,
// sampling bilinearly with a zero border. The image must match the frame
// the transforms were estimated on.
struct SwImage *sw_warp_image(const struct SwImage *image,
                              const struct SwTransformSet *set,
                              uint8_t label);

// Renders the condition image into the target parsing's layout.
//
// `config_json` may be NULL for the default configuration. When
// `diagnostics_json_out` is not NULL it receives a JSON string (free with
// `sw_string_free`) describing per-part estimates and omissions.
struct SwImage *sw_render(const struct SwImage *condition_image,
                          const struct SwSegmentation *condition_parsing,
                          const struct SwSegmentation *target_parsing,
                          const char *config_json,
                          char **diagnostics_json_out);

// Mean SSIM between two images of the same shape, written to `out`.
enum SwStatus sw_ssim(const struct SwImage *a, const struct SwImage *b, double *out);

// Mean IoU between two label maps over `label_count` labels, written to
// `out`.
enum SwStatus sw_mean_iou(const struct SwSegmentation *a,
                          const struct SwSegmentation *b,
                          const uint8_t *labels,
                          size_t label_count,
                          double *out);

// All loss terms between a generated and a target image as a JSON string
// `{"adversarial", "pixel", "perceptual", "pyramid", "total"}`; free with
// `sw_string_free`. `config_json` may be NULL for defaults.
char *sw_losses_json(const struct SwImage *generated,
                     const struct SwImage *target,
                     const char *config_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SOFTWARP_H */
