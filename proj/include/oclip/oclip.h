#ifndef OCLIP_OCLIP_H
#define OCLIP_OCLIP_H

/* C interface to the oclip library. Every call returns an oclip_status; on
 * failure oclip_last_error() describes the problem for the calling thread.
 * Handles are opaque and released with their matching *_free function. */

#include <stddef.h>
#include <stdint.h>

#if defined(OCLIP_BUILDING)
#define OCLIP_API __attribute__((visibility("default")))
#else
#define OCLIP_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum oclip_status {
  OCLIP_OK = 0,
  OCLIP_ERR_DIMENSION = 1,
  OCLIP_ERR_INDEX = 2,
  OCLIP_ERR_CONTRACT = 3,
  OCLIP_ERR_FORMAT = 4,
  OCLIP_ERR_VERSION = 5,
  OCLIP_ERR_TRUNCATED = 6,
  OCLIP_ERR_SHAPE = 7,
  OCLIP_ERR_DIVERGENCE = 8,
  OCLIP_ERR_IO = 9,
  OCLIP_ERR_USAGE = 10,
  OCLIP_ERR_INTERNAL = 11
} oclip_status;

typedef struct oclip_corpus oclip_corpus;
typedef struct oclip_model oclip_model;

OCLIP_API const char* oclip_version(void);
OCLIP_API const char* oclip_status_name(oclip_status status);
/* Message of the last failed call on this thread; empty after success. */
OCLIP_API const char* oclip_last_error(void);

/* ---- corpus ------------------------------------------------------------ */

typedef struct oclip_gen_options {
  uint64_t seed;
  size_t count;
  size_t image_size;
  size_t min_instances;
  size_t max_instances;
  size_t min_length;
  size_t max_length;
  size_t max_scale;
  double noise_amplitude;
  const char* alphabet; /* NULL: A-Z0-9 */
} oclip_gen_options;

OCLIP_API void oclip_gen_options_default(oclip_gen_options* options);
OCLIP_API oclip_status oclip_corpus_generate(const oclip_gen_options* options, oclip_corpus** out);
OCLIP_API oclip_status oclip_corpus_load(const char* path, oclip_corpus** out);
/* Writes one JSON line per sample; `digest` (may be NULL) receives the
 * 64-bit FNV-1a hash of the bytes written. */
OCLIP_API oclip_status oclip_corpus_save(const oclip_corpus* corpus, const char* path,
                                         uint64_t* digest);
OCLIP_API size_t oclip_corpus_size(const oclip_corpus* corpus);
OCLIP_API size_t oclip_corpus_instances(const oclip_corpus* corpus);
OCLIP_API void oclip_corpus_free(oclip_corpus* corpus);

/* ---- training ---------------------------------------------------------- */

typedef struct oclip_train_options {
  const char* config;  /* "default", "tiny" or a JSON object; NULL: "default" */
  size_t batch;
  uint64_t steps;
  double fraction;
  uint64_t seed;
  double lr;
  double weight_decay;
  int contrastive;     /* 0: masked-character loss only */
  int use_decoder;     /* 0: classify from the text encoder alone */
  uint64_t checkpoint_every;
  const char* checkpoint_path; /* NULL: not written */
  const char* metrics_path;    /* NULL: not written */
} oclip_train_options;

typedef struct oclip_metric {
  uint64_t step;
  double l_cls;
  double l_bc;
  double total;
  double acc;
  double lr;
} oclip_metric;

typedef void (*oclip_metric_fn)(const oclip_metric* row, void* user);

OCLIP_API void oclip_train_options_default(oclip_train_options* options);
/* Image size is taken from the corpus. `on_step` may be NULL. */
OCLIP_API oclip_status oclip_pretrain(const oclip_corpus* corpus, const oclip_train_options* options,
                                      oclip_metric_fn on_step, void* user, oclip_model** out);
/* Continues `model` to its scheduled step count. Only checkpoint_every,
 * checkpoint_path and metrics_path are read from `options` (may be NULL). */
OCLIP_API oclip_status oclip_resume(const oclip_corpus* corpus, const oclip_model* model,
                                    const oclip_train_options* options, oclip_metric_fn on_step,
                                    void* user, oclip_model** out);

OCLIP_API oclip_status oclip_model_load(const char* path, oclip_model** out);
OCLIP_API oclip_status oclip_model_save(const oclip_model* model, const char* path);
OCLIP_API uint64_t oclip_model_step(const oclip_model* model);
OCLIP_API uint64_t oclip_model_total_steps(const oclip_model* model);
OCLIP_API void oclip_model_free(oclip_model* model);

/* ---- evaluation -------------------------------------------------------- */

typedef struct oclip_retrieval {
  size_t batches;
  size_t rows;
  double i2t;
  double t2i;
} oclip_retrieval;

OCLIP_API oclip_status oclip_eval_retrieval(const oclip_model* model, const oclip_corpus* corpus,
                                            size_t batch, uint64_t seed, oclip_retrieval* out);

typedef struct oclip_masked_accuracy {
  size_t predictions;
  size_t correct;
  double accuracy;
} oclip_masked_accuracy;

/* Masks every position of every instance the model was trained on (the
 * annotated subset for its fraction and seed) and scores the argmax. */
OCLIP_API oclip_status oclip_eval_masked(const oclip_model* model, const oclip_corpus* corpus,
                                         oclip_masked_accuracy* out);

typedef struct oclip_locality {
  size_t instances;
  double mean_mass;
  double mean_fraction;
  double mean_ratio;
  double ratio_of_means;
} oclip_locality;

OCLIP_API oclip_status oclip_eval_locality(const oclip_model* model, const oclip_corpus* corpus,
                                           oclip_locality* out);

typedef struct oclip_attention_info {
  size_t index;
  const char* text;
  size_t mask_pos;
  char predicted;
  char target;
  int box[4]; /* x0 y0 x1 y1, half-open */
  double mass_in_box;
  double box_fraction;
  double grid_sum;
} oclip_attention_info;

typedef void (*oclip_attention_fn)(const oclip_attention_info* info, void* user);

/* Writes inst<i>.pgm, inst<i>.txt and composite.pgm into out_dir. A negative
 * layer selects the last decoder layer; a negative head averages all heads. */
OCLIP_API oclip_status oclip_inspect_attention(const oclip_model* model, const oclip_corpus* corpus,
                                               size_t sample, long layer, long head,
                                               const char* out_dir, oclip_attention_fn on_instance,
                                               void* user);

typedef struct oclip_grad_group {
  const char* name;
  size_t values;
  double max_rel_error;
  int pass;
} oclip_grad_group;

typedef void (*oclip_grad_fn)(const oclip_grad_group* group, void* user);

/* `config` as in oclip_train_options (NULL: "tiny"). `failures` may be NULL. */
OCLIP_API oclip_status oclip_grad_check(const char* config, uint64_t seed, double tolerance,
                                        oclip_grad_fn on_group, void* user, size_t* failures);

/* ---- manifests --------------------------------------------------------- */

typedef struct oclip_filter_summary {
  size_t kept;
  size_t dropped;
  size_t malformed;
  size_t images_kept;
  size_t images_dropped;
} oclip_filter_summary;

OCLIP_API oclip_status oclip_filter_manifest(const char* in_path, const char* out_path,
                                             double det_threshold, double rec_threshold,
                                             oclip_filter_summary* out);

#ifdef __cplusplus
}
#endif

#endif
