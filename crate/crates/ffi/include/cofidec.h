#ifndef COFIDEC_H
#define COFIDEC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CofidecStatus {
  COFIDEC_STATUS_OK = 0,
  COFIDEC_STATUS_NULL_POINTER = 1,
  COFIDEC_STATUS_INVALID_ARGUMENT = 2,
  // Inputs live on different token supports.
  COFIDEC_STATUS_SUPPORT_MISMATCH = 3,
  // The exact solver was asked for a support above its limit.
  COFIDEC_STATUS_SUPPORT_TOO_LARGE = 4,
  // A decoding stage failed; the message names the stage.
  COFIDEC_STATUS_DECODE_FAILED = 5,
  // The output buffer is too small; the required length was written.
  COFIDEC_STATUS_BUFFER_TOO_SMALL = 6,
  COFIDEC_STATUS_PANIC = 7,
} CofidecStatus;

typedef enum CofidecMetricKind {
  COFIDEC_METRIC_KIND_SQUARED_EUCLIDEAN = 0,
  COFIDEC_METRIC_KIND_EUCLIDEAN = 1,
  COFIDEC_METRIC_KIND_ZERO_ONE = 2,
} CofidecMetricKind;

typedef enum CofidecSolver {
  COFIDEC_SOLVER_EXACT_LP = 0,
  COFIDEC_SOLVER_SINKHORN = 1,
} CofidecSolver;

typedef enum CofidecMode {
  COFIDEC_MODE_REGULAR = 0,
  COFIDEC_MODE_COFIDEC = 1,
} CofidecMode;

typedef struct CofidecCaption CofidecCaption;

// A toy captioner with its decode settings.
typedef struct CofidecDecoder CofidecDecoder;

typedef struct CofidecDistribution CofidecDistribution;

typedef struct CofidecMetric CofidecMetric;

// Fusion settings. [`cofidec_fusion_config_default`] fills the defaults.
typedef struct CofidecFusionConfig {
  enum CofidecSolver solver;
  size_t top_k;
  double weights[3];
  double smoothing_alpha;
  double epsilon;
  size_t max_iter;
  double tol;
} CofidecFusionConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message left by the latest call on this thread if it failed, else null.
// The pointer stays valid until the next call into this library from the
// same thread.
const char *cofidec_last_error(void);

// Builds a distribution from probabilities over strictly increasing ids.
enum CofidecStatus cofidec_distribution_new(const double *probs,
                                            const size_t *ids,
                                            size_t len,
                                            struct CofidecDistribution **out);

// Support size, or 0 for a null handle.
size_t cofidec_distribution_len(const struct CofidecDistribution *d);

enum CofidecStatus cofidec_distribution_read(const struct CofidecDistribution *d,
                                             double *probs,
                                             size_t *ids,
                                             size_t cap,
                                             size_t *len);

void cofidec_distribution_free(struct CofidecDistribution *d);

// Row-major `n x n` cost matrix.
enum CofidecStatus cofidec_metric_from_costs(const double *costs,
                                             size_t n,
                                             struct CofidecMetric **out);

// Row-major `n x dim` embeddings, token `i` in row `i`.
enum CofidecStatus cofidec_metric_from_embeddings(const double *embeddings,
                                                  size_t n,
                                                  size_t dim,
                                                  enum CofidecMetricKind kind,
                                                  struct CofidecMetric **out);

size_t cofidec_metric_size(const struct CofidecMetric *m);

void cofidec_metric_free(struct CofidecMetric *m);

// Barycenter of `count` distributions on one support. `weights` may be null
// for uniform weights; `epsilon` is ignored by the exact solver and a
// nonpositive value selects the default. `objective` may be null.
enum CofidecStatus cofidec_barycenter(const struct CofidecDistribution *const *dists,
                                      const double *weights,
                                      size_t count,
                                      const struct CofidecMetric *metric,
                                      enum CofidecSolver solver,
                                      double epsilon,
                                      struct CofidecDistribution **out,
                                      double *objective);

struct CofidecFusionConfig cofidec_fusion_config_default(void);

// Fuses the original, coarse and fine next-token distributions of one step.
// `cfg` may be null for the defaults; `chosen` (nullable) receives the
// greedy token.
enum CofidecStatus cofidec_fuse(const struct CofidecDistribution *p_v,
                                const struct CofidecDistribution *p_c,
                                const struct CofidecDistribution *p_f,
                                const struct CofidecMetric *metric,
                                const struct CofidecFusionConfig *cfg,
                                struct CofidecDistribution **out,
                                size_t *chosen);

// Creates a decoder from configuration text in the `key = value` format;
// null gives the defaults.
enum CofidecStatus cofidec_decoder_new(const char *config, struct CofidecDecoder **out);

void cofidec_decoder_free(struct CofidecDecoder *d);

// Captions a `width x height x channels` image given row-major with channels
// interleaved.
enum CofidecStatus cofidec_decode(const struct CofidecDecoder *decoder,
                                  const double *pixels,
                                  size_t width,
                                  size_t height,
                                  size_t channels,
                                  enum CofidecMode mode,
                                  struct CofidecCaption **out);

// Token ids including the leading BOS and, unless truncated, the final EOS.
enum CofidecStatus cofidec_caption_tokens(const struct CofidecCaption *c,
                                          size_t *buf,
                                          size_t cap,
                                          size_t *len);

// 1 if decoding hit the token budget, 0 otherwise (and for null).
int32_t cofidec_caption_truncated(const struct CofidecCaption *c);

void cofidec_caption_free(struct CofidecCaption *c);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COFIDEC_H */
