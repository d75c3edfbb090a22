#ifndef RRDM_RRDM_H
#define RRDM_RRDM_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define RRDM_API
#else
#define RRDM_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum rrdm_status {
  RRDM_OK = 0,
  RRDM_PARTIAL = 1, /* command finished but some rollouts failed or broke a constraint */
  RRDM_ERR_PARSE = 2,
  RRDM_ERR_VALIDATION = 3,
  RRDM_ERR_INVALID_ARGUMENT = 4,
  RRDM_ERR_NUMERICAL = 5,
  RRDM_ERR_INFEASIBLE = 6,
  RRDM_ERR_SCHEMA = 7,
  RRDM_ERR_IO = 8,
  RRDM_ERR_MISSING_CONDITION = 9,
  RRDM_ERR_INTERNAL = 10
} rrdm_status;

typedef enum rrdm_condition {
  RRDM_STEADY = 0,
  RRDM_FREE_MOTION = 1,
  RRDM_UNSTEADY = 2
} rrdm_condition;

RRDM_API const char* rrdm_version(void);
RRDM_API const char* rrdm_status_name(rrdm_status status);

/* Message of the last failed call on this thread; "" after a success. */
RRDM_API const char* rrdm_last_error(void);

/* Releases strings returned through char** out-parameters. */
RRDM_API void rrdm_string_free(char* s);

/* ---- run configuration ---- */

typedef struct rrdm_config rrdm_config;

/* `json` may be NULL for defaults. */
RRDM_API rrdm_status rrdm_config_new(const char* json, rrdm_config** out);
RRDM_API rrdm_status rrdm_config_load(const char* path, rrdm_config** out);
/* Dotted key such as "learner.max_iters"; value is a JSON literal or a bare string. */
RRDM_API rrdm_status rrdm_config_set(rrdm_config* config, const char* key, const char* value);
RRDM_API rrdm_status rrdm_config_to_json(const rrdm_config* config, char** out);
RRDM_API void rrdm_config_free(rrdm_config* config);

/* ---- pipeline commands; `summary_json` may be NULL ---- */

RRDM_API rrdm_status rrdm_synth(const rrdm_config* config, char** summary_json);
RRDM_API rrdm_status rrdm_learn(const rrdm_config* config, char** summary_json);
RRDM_API rrdm_status rrdm_simulate(const rrdm_config* config, char** summary_json);
RRDM_API rrdm_status rrdm_evaluate(const rrdm_config* config, char** summary_json);
RRDM_API rrdm_status rrdm_recover(const rrdm_config* config, char** summary_json);

/* ---- recorded logs ---- */

typedef struct rrdm_sample {
  double t;
  double leader_pos;
  double leader_vel;
  double ego_pos;
  double ego_vel;
  double ego_acc;
} rrdm_sample;

typedef struct rrdm_log rrdm_log;

RRDM_API rrdm_status rrdm_log_load(const char* csv_path, const char* sidecar_path, rrdm_log** out);
RRDM_API size_t rrdm_log_length(const rrdm_log* log);
RRDM_API rrdm_status rrdm_log_sample(const rrdm_log* log, size_t index, rrdm_sample* out);
RRDM_API void rrdm_log_free(rrdm_log* log);

/* ---- learned driver models ---- */

typedef struct rrdm_model rrdm_model;

RRDM_API rrdm_status rrdm_model_load(const char* path, rrdm_model** out);
RRDM_API rrdm_status rrdm_model_save(const rrdm_model* model, const char* path);
RRDM_API void rrdm_model_free(rrdm_model* model);

/* Number of weights of a condition. */
RRDM_API rrdm_status rrdm_condition_dim(rrdm_condition condition, size_t* dim);

/* One weight vector drawn with a fresh generator seeded by `seed`. */
RRDM_API rrdm_status rrdm_model_sample_weights(const rrdm_model* model, rrdm_condition condition,
                                               uint64_t seed, double* weights, size_t capacity,
                                               size_t* dim);

/* Global horizon PMF; `count` receives the support size. */
RRDM_API rrdm_status rrdm_model_horizon_pmf(const rrdm_model* model, double* support,
                                            double* probs, size_t capacity, size_t* count);

RRDM_API size_t rrdm_model_warning_count(const rrdm_model* model);
RRDM_API const char* rrdm_model_warning(const rrdm_model* model, size_t index);

/* ---- planning ---- */

typedef struct rrdm_plan_input {
  double ego_pos;
  double ego_vel;
  double leader_pos;
  double leader_vel;
  double v_max;
  double horizon; /* seconds, multiple of the control step */
  rrdm_condition condition;
  const double* weights;
  size_t n_weights;
} rrdm_plan_input;

/* One receding-horizon step with the model's scales and constants and the
   config's planner settings. Returns the clamped first acceleration. */
RRDM_API rrdm_status rrdm_plan_step(const rrdm_model* model, const rrdm_config* config,
                                    const rrdm_plan_input* input, double* a_first);

/* Closed-loop rollout against a recorded leader; `csv` receives the
   trajectory in the sample CSV format, `violations` the audit count. */
RRDM_API rrdm_status rrdm_rollout(const rrdm_log* log, const rrdm_model* model,
                                  const rrdm_config* config, uint64_t seed, char** csv,
                                  size_t* violations);

#ifdef __cplusplus
}
#endif

#endif /* RRDM_RRDM_H */
