/*
 * stpt - spatio-temporal prompt tuning library.
 *
 * C interface over the C++ core: opaque handles, integer status codes, and
 * JSON strings for structured results. All functions are thread-safe as long
 * as each handle is used by one thread at a time; error messages are
 * per-thread.
 */
#ifndef STPT_H
#define STPT_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#ifndef STPT_API
#if defined(__GNUC__) || defined(__clang__)
#define STPT_API __attribute__((visibility("default")))
#else
#define STPT_API
#endif
#endif

/* Status codes; nonzero values match the CLI exit conventions. */
typedef enum stpt_status {
  STPT_OK = 0,
  STPT_ERR_USAGE = 1,    /* invalid arguments */
  STPT_ERR_DATA = 2,     /* missing or malformed files / data */
  STPT_ERR_SHAPE = 3,    /* shape or configuration mismatch */
  STPT_ERR_INTERNAL = 4  /* unexpected failure (numeric blowup, OOM, ...) */
} stpt_status;

/* Message describing the last failing call on this thread. Never NULL. */
STPT_API const char* stpt_last_error(void);

/* Frees strings returned through char** out-parameters. */
STPT_API void stpt_string_free(char* s);

/* --- Grid series ---------------------------------------------------- */

typedef struct stpt_series stpt_series;

typedef struct stpt_synth_spec {
  int32_t rows, cols, attributes;
  int64_t timesteps;
  int32_t interval_minutes;
  double shared_fraction; /* fraction of attributes sharing one hotspot map */
  uint64_t seed;
} stpt_synth_spec;

STPT_API void stpt_synth_spec_default(stpt_synth_spec* spec);

STPT_API stpt_status stpt_series_synthesize(const stpt_synth_spec* spec,
                                            stpt_series** out);
STPT_API stpt_status stpt_series_load(const char* path, stpt_series** out);
STPT_API stpt_status stpt_series_save(const stpt_series* series,
                                      const char* path);
STPT_API stpt_status stpt_series_select(const stpt_series* series,
                                        const int32_t* indices, int32_t count,
                                        stpt_series** out);
STPT_API void stpt_series_free(stpt_series* series);

typedef struct stpt_series_info {
  int32_t rows, cols, attributes;
  int64_t timesteps;
  int32_t interval_minutes;
} stpt_series_info;

STPT_API stpt_status stpt_series_get_info(const stpt_series* series,
                                          stpt_series_info* out);
/* Pointer owned by the series; NULL when index is out of range. */
STPT_API const char* stpt_series_attribute_name(const stpt_series* series,
                                                int32_t index);

/* --- Model and training --------------------------------------------- */

typedef struct stpt_model_config {
  int32_t T, H;          /* input/output horizons */
  int32_t D;             /* embedding size */
  int32_t l_t, l_s;      /* temporal / spatial encoder layers */
  int32_t heads, d_ff;   /* attention heads, feed-forward width */
} stpt_model_config;

STPT_API void stpt_model_config_default(stpt_model_config* cfg);

typedef enum stpt_strategy {
  STPT_STRATEGY_SINGLE = 0,
  STPT_STRATEGY_FULL = 1,
  STPT_STRATEGY_FINE_TUNE = 2,
  STPT_STRATEGY_PROMPT_TUNE = 3
} stpt_strategy;

typedef enum stpt_variant {
  STPT_VARIANT_NONE = 0,
  STPT_VARIANT_ST = 1,
  STPT_VARIANT_TINY = 2,
  STPT_VARIANT_SHALLOW = 3,
  STPT_VARIANT_ADD = 4
} stpt_variant;

typedef struct stpt_train_config {
  int32_t strategy;         /* stpt_strategy */
  double learning_rate;
  int32_t batch_size;
  int32_t max_epochs;
  int32_t patience;         /* epochs without validation improvement */
  uint64_t seed;
  int32_t variant;          /* stpt_variant; prompt tuning only */
  int32_t n_st, n_ti;       /* prompt token counts */
  int32_t target_attribute; /* -1 = all attributes */
  int64_t max_steps;        /* 0 = bounded by epochs only */
  int32_t warm_head;        /* nonzero: keep pretrained head in phase II */
} stpt_train_config;

/* Fills strategy-appropriate defaults (lr 0.003 pretrain / 0.001 tuning,
 * batch 32, 200 epochs, patience 10). */
STPT_API void stpt_train_config_default(stpt_train_config* cfg,
                                        stpt_strategy strategy);

/* Phase I: parameter-sharing pretrain (or single-train when the config
 * names a target attribute). Writes a checkpoint; optionally returns the
 * per-epoch history as JSON. */
STPT_API stpt_status stpt_pretrain(const stpt_series* series,
                                   const stpt_model_config* model,
                                   const stpt_train_config* train,
                                   const char* checkpoint_out,
                                   char** history_json);

/* Phase II (prompt-tune, variant in the config) or full fine-tune, starting
 * from a saved checkpoint. target_attribute must be set. */
STPT_API stpt_status stpt_tune(const char* checkpoint_in,
                               const stpt_series* series,
                               const stpt_train_config* train,
                               const char* checkpoint_out,
                               char** history_json);

/* split: 0 = train, 1 = val, 2 = test. */
STPT_API stpt_status stpt_evaluate(const char* checkpoint_in,
                                   const stpt_series* series, int32_t split,
                                   char** report_json);

STPT_API stpt_status stpt_checkpoint_inspect(const char* path,
                                             char** info_json);

/* Closed-form trainable-parameter count (prompt tokens + head). rows*cols
 * gives N. */
STPT_API stpt_status stpt_count_params(const stpt_model_config* model,
                                       int32_t rows, int32_t cols,
                                       stpt_variant variant, int32_t n_st,
                                       int32_t n_ti, int64_t* out_count);

/* --- Experiment drivers ---------------------------------------------- */

typedef struct stpt_exp_options {
  int32_t n_seeds;
  uint64_t base_seed;
  int32_t pretrain_epochs, tune_epochs, patience;
  double pretrain_lr, tune_lr;
  int32_t batch_size;
  int32_t n_st, n_ti;
  int32_t threads;
  int32_t transfer_split;   /* 0 = first half of the attributes */
  int32_t sweep_attribute;  /* -1 = average over all attributes */
} stpt_exp_options;

STPT_API void stpt_exp_options_default(stpt_exp_options* opts);

/* kind: "overall", "transfer", "ablation" or "sweep". Writes
 * <out_dir>/<kind>.json and .txt; optionally returns the text table. */
STPT_API stpt_status stpt_experiment(const char* kind,
                                     const stpt_series* series,
                                     const stpt_model_config* model,
                                     const stpt_exp_options* options,
                                     const char* out_dir, char** table_text);

#ifdef __cplusplus
}
#endif

#endif /* STPT_H */
