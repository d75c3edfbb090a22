#include "rrdm/rrdm.h"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <memory>
#include <new>
#include <span>
#include <sstream>
#include <string>

#include "rrdm/error.hpp"
#include "rrdm/pipeline.hpp"

struct rrdm_config {
  std::string json;  // document as given plus overrides
  rrdm::RunConfig parsed;
};

struct rrdm_log {
  rrdm::LeaderFollowerLog log;
};

struct rrdm_model {
  rrdm::LearnedDriverModel model;
};

namespace {

thread_local std::string g_last_error;

rrdm_status status_of(rrdm::ErrorKind kind) {
  using rrdm::ErrorKind;
  switch (kind) {
    case ErrorKind::kParse: return RRDM_ERR_PARSE;
    case ErrorKind::kValidation: return RRDM_ERR_VALIDATION;
    case ErrorKind::kInvalidArgument: return RRDM_ERR_INVALID_ARGUMENT;
    case ErrorKind::kNumerical: return RRDM_ERR_NUMERICAL;
    case ErrorKind::kInfeasible: return RRDM_ERR_INFEASIBLE;
    case ErrorKind::kSchema: return RRDM_ERR_SCHEMA;
    case ErrorKind::kIo: return RRDM_ERR_IO;
    case ErrorKind::kMissingCondition: return RRDM_ERR_MISSING_CONDITION;
  }
  return RRDM_ERR_INTERNAL;
}

template <typename Fn>
rrdm_status guarded(Fn&& fn) {
  try {
    g_last_error.clear();
    return fn();
  } catch (const rrdm::Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
  } catch (const std::exception& e) {
    g_last_error = e.what();
  } catch (...) {
    g_last_error = "unknown error";
  }
  return RRDM_ERR_INTERNAL;
}

void require(bool ok, const char* what) {
  if (!ok) rrdm::fail(rrdm::ErrorKind::kInvalidArgument, what);
}

char* copy_string(const std::string& s) {
  auto* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

rrdm::DrivingCondition condition_of(rrdm_condition c) {
  switch (c) {
    case RRDM_STEADY: return rrdm::DrivingCondition::kSteadyCarFollowing;
    case RRDM_FREE_MOTION: return rrdm::DrivingCondition::kFreeMotion;
    case RRDM_UNSTEADY: return rrdm::DrivingCondition::kUnsteadyCarFollowing;
  }
  rrdm::fail(rrdm::ErrorKind::kInvalidArgument, "unknown driving condition");
}

using Command = rrdm::CommandResult (*)(const rrdm::RunConfig&);

rrdm_status run_command(Command cmd, const rrdm_config* config, char** summary) {
  return guarded([&] {
    require(config != nullptr, "config is null");
    if (summary) *summary = nullptr;
    const auto result = cmd(config->parsed);
    if (summary) *summary = copy_string(result.summary_json);
    return result.status == rrdm::CommandStatus::kOk ? RRDM_OK : RRDM_PARTIAL;
  });
}

}  // namespace

extern "C" {

const char* rrdm_version(void) { return RRDM_VERSION; }

const char* rrdm_status_name(rrdm_status status) {
  switch (status) {
    case RRDM_OK: return "ok";
    case RRDM_PARTIAL: return "partial";
    case RRDM_ERR_PARSE: return "parse error";
    case RRDM_ERR_VALIDATION: return "validation error";
    case RRDM_ERR_INVALID_ARGUMENT: return "invalid argument";
    case RRDM_ERR_NUMERICAL: return "numerical error";
    case RRDM_ERR_INFEASIBLE: return "infeasible";
    case RRDM_ERR_SCHEMA: return "schema error";
    case RRDM_ERR_IO: return "i/o error";
    case RRDM_ERR_MISSING_CONDITION: return "missing condition";
    case RRDM_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* rrdm_last_error(void) { return g_last_error.c_str(); }

void rrdm_string_free(char* s) { std::free(s); }

rrdm_status rrdm_config_new(const char* json, rrdm_config** out) {
  return guarded([&] {
    require(out != nullptr, "out is null");
    *out = nullptr;
    auto cfg = std::make_unique<rrdm_config>();
    cfg->json = json ? json : "{}";
    cfg->parsed = rrdm::parse_run_config(cfg->json);
    *out = cfg.release();
    return RRDM_OK;
  });
}

rrdm_status rrdm_config_load(const char* path, rrdm_config** out) {
  return guarded([&] {
    require(path != nullptr && out != nullptr, "null argument");
    *out = nullptr;
    std::ifstream in(path, std::ios::binary);
    if (!in) rrdm::fail(rrdm::ErrorKind::kIo, std::string("cannot read config ") + path);
    std::stringstream ss;
    ss << in.rdbuf();
    auto cfg = std::make_unique<rrdm_config>();
    cfg->json = ss.str();
    cfg->parsed = rrdm::parse_run_config(cfg->json);
    *out = cfg.release();
    return RRDM_OK;
  });
}

rrdm_status rrdm_config_set(rrdm_config* config, const char* key, const char* value) {
  return guarded([&] {
    require(config && key && value, "null argument");
    auto json = rrdm::override_config(config->json, key, value);
    auto parsed = rrdm::parse_run_config(json);
    config->json = std::move(json);
    config->parsed = std::move(parsed);
    return RRDM_OK;
  });
}

rrdm_status rrdm_config_to_json(const rrdm_config* config, char** out) {
  return guarded([&] {
    require(config && out, "null argument");
    *out = copy_string(rrdm::run_config_json(config->parsed));
    return RRDM_OK;
  });
}

void rrdm_config_free(rrdm_config* config) { delete config; }

rrdm_status rrdm_synth(const rrdm_config* config, char** summary_json) {
  return run_command(&rrdm::cmd_synth, config, summary_json);
}
rrdm_status rrdm_learn(const rrdm_config* config, char** summary_json) {
  return run_command(&rrdm::cmd_learn, config, summary_json);
}
rrdm_status rrdm_simulate(const rrdm_config* config, char** summary_json) {
  return run_command(&rrdm::cmd_simulate, config, summary_json);
}
rrdm_status rrdm_evaluate(const rrdm_config* config, char** summary_json) {
  return run_command(&rrdm::cmd_evaluate, config, summary_json);
}
rrdm_status rrdm_recover(const rrdm_config* config, char** summary_json) {
  return run_command(&rrdm::cmd_recover, config, summary_json);
}

rrdm_status rrdm_log_load(const char* csv_path, const char* sidecar_path, rrdm_log** out) {
  return guarded([&] {
    require(csv_path && sidecar_path && out, "null argument");
    *out = nullptr;
    auto log = std::make_unique<rrdm_log>();
    log->log = rrdm::load_log_file(csv_path, sidecar_path);
    *out = log.release();
    return RRDM_OK;
  });
}

size_t rrdm_log_length(const rrdm_log* log) { return log ? log->log.samples.size() : 0; }

rrdm_status rrdm_log_sample(const rrdm_log* log, size_t index, rrdm_sample* out) {
  return guarded([&] {
    require(log && out, "null argument");
    require(index < log->log.samples.size(), "sample index out of range");
    const auto& s = log->log.samples[index];
    *out = {s.t, s.leader_pos, s.leader_vel, s.ego_pos, s.ego_vel, s.ego_acc};
    return RRDM_OK;
  });
}

void rrdm_log_free(rrdm_log* log) { delete log; }

rrdm_status rrdm_model_load(const char* path, rrdm_model** out) {
  return guarded([&] {
    require(path && out, "null argument");
    *out = nullptr;
    auto m = std::make_unique<rrdm_model>();
    m->model = rrdm::load_model(path);
    *out = m.release();
    return RRDM_OK;
  });
}

rrdm_status rrdm_model_save(const rrdm_model* model, const char* path) {
  return guarded([&] {
    require(model && path, "null argument");
    rrdm::save_model(model->model, path);
    return RRDM_OK;
  });
}

void rrdm_model_free(rrdm_model* model) { delete model; }

rrdm_status rrdm_condition_dim(rrdm_condition condition, size_t* dim) {
  return guarded([&] {
    require(dim != nullptr, "dim is null");
    *dim = rrdm::active_features(condition_of(condition)).size();
    return RRDM_OK;
  });
}

rrdm_status rrdm_model_sample_weights(const rrdm_model* model, rrdm_condition condition,
                                      uint64_t seed, double* weights, size_t capacity,
                                      size_t* dim) {
  return guarded([&] {
    require(model && weights, "null argument");
    const auto& copula = model->model.copula(condition_of(condition));
    if (dim) *dim = copula.dim();
    require(capacity >= copula.dim(), "weight buffer is too small");
    rrdm::Rng rng(seed);
    const auto w = rrdm::sample_weights(copula, rng);
    std::copy(w.begin(), w.end(), weights);
    return RRDM_OK;
  });
}

rrdm_status rrdm_model_horizon_pmf(const rrdm_model* model, double* support, double* probs,
                                   size_t capacity, size_t* count) {
  return guarded([&] {
    require(model && support && probs, "null argument");
    const auto& h = model->model.horizons;
    if (count) *count = h.support.size();
    require(capacity >= h.support.size(), "PMF buffer is too small");
    std::copy(h.support.begin(), h.support.end(), support);
    std::copy(h.probs.begin(), h.probs.end(), probs);
    return RRDM_OK;
  });
}

size_t rrdm_model_warning_count(const rrdm_model* model) {
  return model ? model->model.warnings.size() : 0;
}

const char* rrdm_model_warning(const rrdm_model* model, size_t index) {
  if (!model || index >= model->model.warnings.size()) return nullptr;
  return model->model.warnings[index].c_str();
}

rrdm_status rrdm_plan_step(const rrdm_model* model, const rrdm_config* config,
                           const rrdm_plan_input* input, double* a_first) {
  return guarded([&] {
    require(model && config && input && a_first, "null argument");
    require(input->weights != nullptr || input->n_weights == 0, "weights are null");
    const auto cond = condition_of(input->condition);
    const auto& cfg = config->parsed.planner;
    const auto pred = rrdm::predict_leader(input->leader_pos, input->leader_vel, input->horizon, cfg.dt);
    rrdm::DriverConstants constants = model->model.constants;
    constants.d_s = cfg.d_s;
    const rrdm::EgoState ego{0.0, input->ego_pos, input->ego_vel, 0.0};
    const auto sol = rrdm::solve_nmpc_step(
        ego, pred, std::span<const double>(input->weights, input->n_weights), cond, input->horizon,
        constants, model->model.normalization, input->v_max, cfg);
    *a_first = sol.a_first;
    return RRDM_OK;
  });
}

rrdm_status rrdm_rollout(const rrdm_log* log, const rrdm_model* model, const rrdm_config* config,
                         uint64_t seed, char** csv, size_t* violations) {
  return guarded([&] {
    require(log && model && config, "null argument");
    if (csv) *csv = nullptr;
    const auto r = rrdm::rollout_scenario(log->log, model->model, config->parsed.planner, seed);
    if (violations) *violations = rrdm::audit_rollout(r).violations;
    if (csv) {
      std::ostringstream s;
      rrdm::write_rollout_csv(s, r);
      *csv = copy_string(s.str());
    }
    return RRDM_OK;
  });
}

}  // extern "C"
