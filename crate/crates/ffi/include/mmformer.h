#ifndef MMFORMER_H
#define MMFORMER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every exported call.
 */
typedef enum MmfStatus {
  MMF_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  MMF_STATUS_NULL_POINTER = 1,
  /**
   * Bad argument or configuration value.
   */
  MMF_STATUS_INVALID_ARGUMENT = 2,
  /**
   * File could not be read or written.
   */
  MMF_STATUS_IO = 3,
  /**
   * Malformed or inconsistent scene data.
   */
  MMF_STATUS_DATA = 4,
  /**
   * Parameters do not fit the model configuration or scene.
   */
  MMF_STATUS_PARAM_MISMATCH = 5,
  /**
   * Non-finite values or undefined metrics.
   */
  MMF_STATUS_NUMERIC = 6,
  /**
   * Internal panic caught at the boundary.
   */
  MMF_STATUS_PANIC = 7,
} MmfStatus;

/**
 * Opaque model handle: parameters plus the configuration they were trained with.
 */
typedef struct MmfModel MmfModel;

/**
 * Opaque scene handle.
 */
typedef struct MmfScene MmfScene;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message (NUL-terminated, truncated to
 * `len - 1` bytes) into `buf` and returns the full message length in bytes.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t mmf_last_error(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mmf_version(void);

/**
 * Generates a synthetic scene. `preset` is `"trento"` or `"muufl"`;
 * `num_classes = 0` keeps the preset's class count. Bands are normalized as on load.
 *
 * # Safety
 * `preset` must be a valid C string and `out` a valid pointer.
 */
enum MmfStatus mmf_scene_synth(const char *preset,
                               uint32_t num_classes,
                               uint64_t seed,
                               struct MmfScene **out);

/**
 * Loads an RSRF scene file and normalizes its bands.
 *
 * # Safety
 * `path` must be a valid C string and `out` a valid pointer.
 */
enum MmfStatus mmf_scene_load(const char *path, struct MmfScene **out);

/**
 * Writes the scene's (normalized) bands and labels as an RSRF file.
 *
 * # Safety
 * `scene` must come from this library and `path` be a valid C string.
 */
enum MmfStatus mmf_scene_save(const struct MmfScene *scene, const char *path);

/**
 * Reports band counts, extent and class count. Any output pointer may be null.
 *
 * # Safety
 * `scene` must come from this library; non-null outputs must be writable.
 */
enum MmfStatus mmf_scene_dims(const struct MmfScene *scene,
                              uint32_t *hsi_bands,
                              uint32_t *lidar_bands,
                              uint32_t *height,
                              uint32_t *width,
                              uint32_t *num_classes);

/**
 * Ground-truth label at a pixel (0 = unlabeled, classes from 1).
 *
 * # Safety
 * `scene` must come from this library and `label` be writable.
 */
enum MmfStatus mmf_scene_label(const struct MmfScene *scene,
                               uint32_t row,
                               uint32_t col,
                               uint16_t *label);

/**
 * Releases a scene; null is ignored.
 *
 * # Safety
 * `scene` must be null or come from this library and not be used afterwards.
 */
void mmf_scene_free(struct MmfScene *scene);

/**
 * Loads parameters with the `key = value` configuration they were trained with
 * (the `config.txt` a training run writes). A null `config_path` looks for
 * `config.txt` beside the parameter file.
 *
 * # Safety
 * `params_path` must be a valid C string, `config_path` null or a valid C
 * string, `out` a valid pointer.
 */
enum MmfStatus mmf_model_load(const char *params_path,
                              const char *config_path,
                              struct MmfModel **out);

/**
 * Class count of a loaded model.
 *
 * # Safety
 * `model` must come from this library and `num_classes` be writable.
 */
enum MmfStatus mmf_model_num_classes(const struct MmfModel *model, uint32_t *num_classes);

/**
 * Classifies `n` labeled pixels `(rows[i], cols[i])`, writing 0-based classes to `classes`.
 *
 * # Safety
 * `rows`, `cols` and `classes` must each hold `n` elements.
 */
enum MmfStatus mmf_predict_pixels(const struct MmfModel *model,
                                  const struct MmfScene *scene,
                                  const uint32_t *rows,
                                  const uint32_t *cols,
                                  size_t n,
                                  uint32_t *classes);

/**
 * Classifies `n` prepared patches: `hsi` is `[n, S, 16, 16]`, `lidar` is
 * `[n, L, 16, 16]`, both row-major. A branch the model does not use may be null.
 *
 * # Safety
 * Non-null inputs must hold the stated element counts; `classes` holds `n`.
 */
enum MmfStatus mmf_predict_patches(const struct MmfModel *model,
                                   const double *hsi,
                                   const double *lidar,
                                   size_t n,
                                   uint32_t *classes);

/**
 * Classifies every labeled pixel and writes the map as a binary PPM.
 *
 * # Safety
 * Handles must come from this library and `path` be a valid C string.
 */
enum MmfStatus mmf_render_map(const struct MmfModel *model,
                              const struct MmfScene *scene,
                              const char *path);

/**
 * Releases a model; null is ignored.
 *
 * # Safety
 * `model` must be null or come from this library and not be used afterwards.
 */
void mmf_model_free(struct MmfModel *model);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* MMFORMER_H */
