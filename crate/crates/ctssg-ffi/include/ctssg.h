/* C interface to the slice-graph spectral encoder. */

#ifndef CTSSG_H
#define CTSSG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Outcome of a call. Everything except `Ok` leaves a message in
 `ctssg_last_error`.
 */
typedef enum CtssgStatus {
  CTSSG_STATUS_OK = 0,
  /*
   A required pointer argument was null.
   */
  CTSSG_STATUS_NULL_POINTER = 1,
  /*
   An argument violated the documented contract.
   */
  CTSSG_STATUS_INVALID_ARGUMENT = 2,
  /*
   A numerical procedure failed to produce a finite result.
   */
  CTSSG_STATUS_NUMERIC = 3,
  /*
   The filesystem said no.
   */
  CTSSG_STATUS_IO = 4,
  /*
   A bug: an unexpected panic was caught at the boundary.
   */
  CTSSG_STATUS_INTERNAL = 5,
} CtssgStatus;

/*
 Distance-weighted sequence graph over slice triplets.
 */
typedef struct CtssgGraph CtssgGraph;

/*
 Encoder with its graphs and parameters, ready for inference.
 */
typedef struct CtssgModel CtssgModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message from the most recent failing call on this thread, or null
 when every call so far succeeded. The pointer stays valid until the
 next failing call on the same thread; do not free it.
 */
const char *ctssg_last_error(void);

/*
 Library version as a static string; do not free it.
 */
const char *ctssg_version(void);

/*
 Frees a string returned by this library.

 # Safety
 `s` must be null or a pointer obtained from a `ctssg_*` call that
 documents this as its deallocator, passed at most once.
 */
void ctssg_string_free(char *s);

/*
 Builds a banded graph with `nodes` triplets, edges up to
 `receptive_field` index steps apart, and physical slice spacing
 `spacing_dm` (decimeters). The handle goes to `out`.

 # Safety
 `out` must be a valid pointer.
 */
enum CtssgStatus ctssg_graph_build(size_t nodes,
                                   size_t receptive_field,
                                   double spacing_dm,
                                   struct CtssgGraph **out);

/*
 # Safety
 `graph` must be null or an unfreed handle from `ctssg_graph_build`.
 */
void ctssg_graph_free(struct CtssgGraph *graph);

/*
 # Safety
 `graph` and `out` must be valid pointers.
 */
enum CtssgStatus ctssg_graph_node_count(const struct CtssgGraph *graph, size_t *out);

/*
 # Safety
 `graph` and `out` must be valid pointers.
 */
enum CtssgStatus ctssg_graph_edge_count(const struct CtssgGraph *graph, size_t *out);

/*
 Largest Laplacian eigenvalue, the spectral normalizer.

 # Safety
 `graph` and `out` must be valid pointers.
 */
enum CtssgStatus ctssg_graph_lambda_max(const struct CtssgGraph *graph, double *out);

/*
 Serializes nodes, weighted edges, and the spectral normalizer to
 JSON. Free the string with `ctssg_string_free`.

 # Safety
 `graph` and `out` must be valid pointers.
 */
enum CtssgStatus ctssg_graph_export_json(const struct CtssgGraph *graph, char **out);

/*
 Creates a model with freshly initialized parameters from an
 experiment config JSON document (the same schema the CLI reads).

 # Safety
 `config_json` must be a valid nul-terminated string and `out` a
 valid pointer.
 */
enum CtssgStatus ctssg_model_new(const char *config_json, struct CtssgModel **out);

/*
 Loads a trained model from a checkpoint directory written by the
 trainer (`checkpoint_best` or `checkpoint_last`).

 # Safety
 `checkpoint_dir` must be a valid nul-terminated string and `out` a
 valid pointer.
 */
enum CtssgStatus ctssg_model_load(const char *checkpoint_dir, struct CtssgModel **out);

/*
 # Safety
 `model` must be null or an unfreed handle from `ctssg_model_new`
 or `ctssg_model_load`.
 */
void ctssg_model_free(struct CtssgModel *model);

/*
 # Safety
 `model` and `out` must be valid pointers.
 */
enum CtssgStatus ctssg_model_param_count(const struct CtssgModel *model, size_t *out);

/*
 Number of output labels; the length `ctssg_model_predict` fills.

 # Safety
 `model` and `out` must be valid pointers.
 */
enum CtssgStatus ctssg_model_label_count(const struct CtssgModel *model, size_t *out);

/*
 Voxel count one volume must supply: slices x height x width, slice
 major.

 # Safety
 `model` and `out` must be valid pointers.
 */
enum CtssgStatus ctssg_model_volume_len(const struct CtssgModel *model, size_t *out);

/*
 Per-label probabilities for one volume. `voxels` holds
 `ctssg_model_volume_len` values in slice-major order; `probs`
 receives `ctssg_model_label_count` values.

 # Safety
 `model` must be a live handle; `voxels` and `probs` must point to
 arrays of the stated lengths.
 */
enum CtssgStatus ctssg_model_predict(const struct CtssgModel *model,
                                     const double *voxels,
                                     size_t voxels_len,
                                     double *probs,
                                     size_t probs_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CTSSG_H */
