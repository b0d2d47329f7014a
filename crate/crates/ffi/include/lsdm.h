#ifndef LSDM_H
#define LSDM_H

#include <stddef.h>
#include <stdint.h>

typedef enum LsdmStatus {
  LSDM_STATUS_OK = 0,
  LSDM_STATUS_NULL_POINTER = 1,
  LSDM_STATUS_INVALID_ARGUMENT = 2,
  LSDM_STATUS_SHAPE_MISMATCH = 3,
  LSDM_STATUS_IO = 4,
  /*
   Malformed file, version mismatch or wrong kind.
   */
  LSDM_STATUS_CHECKPOINT = 5,
  LSDM_STATUS_NUMERIC = 6,
  LSDM_STATUS_PANIC = 7,
} LsdmStatus;

typedef enum LsdmDivergence {
  LSDM_DIVERGENCE_KL = 0,
  LSDM_DIVERGENCE_JS = 1,
  LSDM_DIVERGENCE_CHI2 = 2,
  LSDM_DIVERGENCE_TV = 3,
  LSDM_DIVERGENCE_HELLINGER2 = 4,
} LsdmDivergence;

/*
 Opaque generator bundle (autoencoder plus latent generator).
 */
typedef struct LsdmBundle LsdmBundle;

/*
 Opaque trained MLP.
 */
typedef struct LsdmNetwork LsdmNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or NULL. The pointer stays
 valid until the next failing call on the same thread.
 */
const char *lsdm_last_error(void);

/*
 Loads an `mlp` checkpoint. Free with [`lsdm_network_free`].

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum LsdmStatus lsdm_network_load(const char *path, struct LsdmNetwork **out);

/*
 # Safety
 `net` must come from [`lsdm_network_load`] and not be used afterwards. NULL is ignored.
 */
void lsdm_network_free(struct LsdmNetwork *net);

/*
 Writes the input and output widths.

 # Safety
 All pointers must be valid.
 */
enum LsdmStatus lsdm_network_dims(const struct LsdmNetwork *net,
                                  size_t *input_dim,
                                  size_t *output_dim);

/*
 Forward pass on `rows × input_dim` row-major input; writes `rows × output_dim` values.

 # Safety
 `input` must hold `rows * input_dim` values and `output` `output_len` values.
 */
enum LsdmStatus lsdm_network_forward(const struct LsdmNetwork *net,
                                     const double *input,
                                     size_t rows,
                                     size_t input_dim,
                                     double *output,
                                     size_t output_len);

/*
 Product of layer spectral norms and activation slope bounds.

 # Safety
 `net` and `out` must be valid.
 */
enum LsdmStatus lsdm_network_lipschitz_bound(const struct LsdmNetwork *net, double *out);

/*
 Loads a `bundle` checkpoint. Free with [`lsdm_bundle_free`].

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum LsdmStatus lsdm_bundle_load(const char *path, struct LsdmBundle **out);

/*
 # Safety
 `bundle` must come from [`lsdm_bundle_load`] and not be used afterwards. NULL is ignored.
 */
void lsdm_bundle_free(struct LsdmBundle *bundle);

/*
 Writes the predictor width `p` and the response width.

 # Safety
 All pointers must be valid.
 */
enum LsdmStatus lsdm_bundle_dims(const struct LsdmBundle *bundle,
                                 size_t *predictor_dim,
                                 size_t *response_dim);

/*
 Draws `count` responses per row of `x` (`rows × predictor_dim`), grouped by
 row, into `output` (`rows * count * response_dim` values). The same `seed`
 gives the same draws.

 # Safety
 Buffers must hold the stated number of values.
 */
enum LsdmStatus lsdm_bundle_generate(const struct LsdmBundle *bundle,
                                     const double *x,
                                     size_t rows,
                                     size_t predictor_dim,
                                     size_t count,
                                     uint64_t seed,
                                     double *output,
                                     size_t output_len);

/*
 Exact W1 between two equal-size point clouds (`n × dim`, row-major).

 # Safety
 `a` and `b` must hold `n * dim` values; `out` must be valid.
 */
enum LsdmStatus lsdm_w1_exact(const double *a, const double *b, size_t n, size_t dim, double *out);

/*
 W1 between two weighted distributions on the line. Supports must be
 strictly increasing; weights are normalized.

 # Safety
 Each support/weight pair must hold its stated count; `out` must be valid.
 */
enum LsdmStatus lsdm_w1_1d(const double *support_p,
                           const double *weights_p,
                           size_t len_p,
                           const double *support_q,
                           const double *weights_q,
                           size_t len_q,
                           double *out);

/*
 `D_f(p‖q)` for two histograms on the same `len` bins.

 # Safety
 `p` and `q` must hold `len` values; `out` must be valid.
 */
enum LsdmStatus lsdm_f_divergence(const double *p,
                                  const double *q,
                                  size_t len,
                                  enum LsdmDivergence kind,
                                  double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LSDM_H */
