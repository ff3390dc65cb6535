/*
 * affplan C interface.
 *
 * Objects are opaque handles created and destroyed through this API. Every
 * fallible call returns an affplan_status; on failure the thread's last error
 * message is available from affplan_last_error() until the next call.
 * Text results are streamed to a caller-supplied sink.
 */
#ifndef AFFPLAN_H
#define AFFPLAN_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define AFFPLAN_API __declspec(dllexport)
#else
#define AFFPLAN_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum affplan_status {
  AFFPLAN_OK = 0,
  AFFPLAN_ERR_ARGUMENT = 1, /* null handle or out-of-range argument */
  AFFPLAN_ERR_CONFIG = 2,   /* invalid configuration or incompatible checkpoint */
  AFFPLAN_ERR_PARSE = 3,    /* malformed text input; message carries the line */
  AFFPLAN_ERR_IO = 4,
  AFFPLAN_ERR_NUMERIC = 5,  /* non-finite parameters or gradients */
  AFFPLAN_ERR_DATA = 6,     /* replay buffer too small for a fitting step */
  AFFPLAN_ERR_CONTRACT = 7, /* internal precondition violated */
  AFFPLAN_ERR_INTERNAL = 8
} affplan_status;

typedef struct affplan_config affplan_config;
typedef struct affplan_bundle affplan_bundle;

/* Receives `size` bytes of text; not NUL-terminated. */
typedef void (*affplan_sink)(const char* data, size_t size, void* user);

AFFPLAN_API const char* affplan_version(void);
AFFPLAN_API const char* affplan_status_name(affplan_status status);
/* Message of the last failed call on this thread ("" if none). */
AFFPLAN_API const char* affplan_last_error(void);

/* ---- experiment configuration ------------------------------------------ */

AFFPLAN_API affplan_status affplan_config_create(affplan_config** out);
AFFPLAN_API void affplan_config_destroy(affplan_config* config);
/* Layers `key value` lines over the current values. */
AFFPLAN_API affplan_status affplan_config_parse(affplan_config* config, const char* text);
AFFPLAN_API affplan_status affplan_config_load(affplan_config* config, const char* path);
AFFPLAN_API affplan_status affplan_config_set(affplan_config* config, const char* key, const char* value);
AFFPLAN_API affplan_status affplan_config_get(const affplan_config* config, const char* key, affplan_sink sink,
                                              void* user);
/* Canonical text with every key. */
AFFPLAN_API affplan_status affplan_config_serialize(const affplan_config* config, affplan_sink sink, void* user);
AFFPLAN_API affplan_status affplan_config_validate(const affplan_config* config);
AFFPLAN_API size_t affplan_config_key_count(void);
/* NULL when out of range. */
AFFPLAN_API const char* affplan_config_key(size_t index);

/* ---- training ------------------------------------------------------------ */

/* Trains into `out_dir` (config snapshot, metrics.csv, timing.csv,
 * checkpoint.bin, buffer.bin, final.bundle). With `resume` non-zero an
 * existing checkpoint of the same configuration is continued. `progress`
 * may be NULL. */
AFFPLAN_API affplan_status affplan_train(const affplan_config* config, const char* out_dir, int resume,
                                         affplan_sink progress, void* user);

/* ---- checkpoints --------------------------------------------------------- */

AFFPLAN_API affplan_status affplan_bundle_load(const char* path, affplan_bundle** out);
AFFPLAN_API void affplan_bundle_destroy(affplan_bundle* bundle);
AFFPLAN_API size_t affplan_bundle_observation_width(const affplan_bundle* bundle);
AFFPLAN_API size_t affplan_bundle_skill_count(const affplan_bundle* bundle);

/* ---- evaluation ---------------------------------------------------------- */

typedef struct affplan_goal_rate {
  char goal[64];
  size_t episodes;
  size_t successes;
  double rate;
  double ci_low; /* Wilson 95% */
  double ci_high;
} affplan_goal_rate;

/* Frozen-bundle episodes. `bundle` may be NULL for methods that do not learn.
 * Up to `capacity` per-goal rows are written to `rates`; `*count` receives
 * the number of attempted goals. The report text goes to `sink` (optional). */
AFFPLAN_API affplan_status affplan_eval(const affplan_config* config, const affplan_bundle* bundle, size_t episodes,
                                        uint64_t seed, affplan_goal_rate* rates, size_t capacity, size_t* count,
                                        affplan_sink sink, void* user);

/* ---- heatmaps ------------------------------------------------------------ */

typedef struct affplan_heatmap_spec {
  size_t width;
  size_t height;
  const char* skill; /* "grasp" or a skill name */
  const char* goal;
  uint64_t seed;
  int normalize; /* 1: min-max, 0: clamp raw scores */
  float fixed[4];
} affplan_heatmap_spec;

AFFPLAN_API void affplan_heatmap_spec_default(affplan_heatmap_spec* spec);
/* Writes the CSV grid and the 8-bit PGM image. The domain and planner
 * settings come from `config`. Either path may be NULL. */
AFFPLAN_API affplan_status affplan_heatmap(const affplan_bundle* bundle, const affplan_config* config,
                                           const affplan_heatmap_spec* spec, const char* csv_path,
                                           const char* pgm_path);

/* ---- tabular oracle ------------------------------------------------------ */

typedef struct affplan_oracle_result {
  int has_plan;
  int cross_check_ok;
  double probability;
  double max_discrepancy;
  size_t ranked;
} affplan_oracle_result;

/* Best goal-directed plan, its completion probability and the full ranking,
 * cross-checked against trajectory enumeration. `goal` may be NULL (goal 0). */
AFFPLAN_API affplan_status affplan_oracle(const char* mdp_path, const char* goal, size_t max_length,
                                          affplan_oracle_result* result, affplan_sink sink, void* user);

/* ---- replay buffers ------------------------------------------------------ */

/* Summary of a buffer snapshot, or one episode's trajectory log when
 * `episode` >= 0. `checkpoint_path` (optional) supplies skill and goal names. */
AFFPLAN_API affplan_status affplan_replay_inspect(const char* buffer_path, const char* checkpoint_path,
                                                  long episode, affplan_sink sink, void* user);

#ifdef __cplusplus
}
#endif

#endif /* AFFPLAN_H */
