// Command-line front end. Talks to the library only through rrdm.h.
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rrdm/rrdm.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;

std::string json_string(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c;
  }
  return out + "\"";
}

int exit_code(rrdm_status st) {
  switch (st) {
    case RRDM_OK: return kExitOk;
    case RRDM_ERR_SCHEMA:
    case RRDM_ERR_INVALID_ARGUMENT:
    case RRDM_ERR_IO: return kExitConfig;
    default: return kExitFailure;
  }
}

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> data_dir, model, out, samples_dir, scenario;
  std::optional<int> samples;
  std::optional<unsigned> threads;
  std::vector<std::string> sets;
  bool print_config = false;
};

// Applies flag values on top of the config file; returns false on error.
bool apply(rrdm_config* cfg, const Options& o) {
  std::vector<std::pair<std::string, std::string>> kv;
  if (o.seed) kv.emplace_back("seed", std::to_string(*o.seed));
  if (o.data_dir) kv.emplace_back("data_dir", json_string(*o.data_dir));
  if (o.model) kv.emplace_back("model", json_string(*o.model));
  if (o.out) kv.emplace_back("out", json_string(*o.out));
  if (o.samples_dir) kv.emplace_back("samples_dir", json_string(*o.samples_dir));
  if (o.scenario) kv.emplace_back("scenario", json_string(*o.scenario));
  if (o.samples) kv.emplace_back("samples", std::to_string(*o.samples));
  if (o.threads) kv.emplace_back("learner.threads", std::to_string(*o.threads));
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) {
      std::fprintf(stderr, "error: --set expects key=value, got '%s'\n", s.c_str());
      return false;
    }
    kv.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  for (const auto& [k, v] : kv) {
    if (rrdm_config_set(cfg, k.c_str(), v.c_str()) != RRDM_OK) {
      std::fprintf(stderr, "error: %s\n", rrdm_last_error());
      return false;
    }
  }
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learn stochastic car-following drivers from leader-follower logs and replay them"};
  app.set_version_flag("--version", std::string(rrdm_version()));
  app.require_subcommand(1, 1);
  app.fallthrough();

  Options o;
  app.add_option("-c,--config", o.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "Master seed");
  app.add_option("--data-dir", o.data_dir, "Directory of CSV logs with JSON sidecars");
  app.add_option("--model", o.model, "Model file path");
  app.add_option("--out", o.out, "Output directory");
  app.add_option("--samples", o.samples, "Rollouts per held-out log");
  app.add_option("--threads", o.threads, "Worker threads (0: all cores)");
  app.add_option("--set", o.sets, "Override any config key, e.g. learner.max_iters=500");
  app.add_flag("--print-config", o.print_config, "Print the resolved config before running");

  auto* synth = app.add_subcommand("synth", "Generate the synthetic demonstration corpus");
  auto* learn = app.add_subcommand("learn", "Split the corpus, learn weights and fit the model");
  auto* simulate = app.add_subcommand("simulate", "Roll the model out on held-out logs");
  simulate->add_option("--scenario", o.scenario, "Only logs of this scenario id");
  auto* evaluate = app.add_subcommand("evaluate", "RMSE and horizon PMFs of rollouts vs. logs");
  evaluate->add_option("--samples-dir", o.samples_dir, "Directory written by simulate");
  auto* recover = app.add_subcommand("recover", "Ground-truth recovery experiment");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  rrdm_config* cfg = nullptr;
  const rrdm_status st = o.config_path.empty() ? rrdm_config_new(nullptr, &cfg)
                                               : rrdm_config_load(o.config_path.c_str(), &cfg);
  if (st != RRDM_OK) {
    std::fprintf(stderr, "error: %s\n", rrdm_last_error());
    return kExitConfig;
  }
  if (!apply(cfg, o)) {
    rrdm_config_free(cfg);
    return kExitConfig;
  }
  if (o.print_config) {
    char* text = nullptr;
    if (rrdm_config_to_json(cfg, &text) == RRDM_OK) {
      std::fputs(text, stdout);
      rrdm_string_free(text);
    }
  }

  rrdm_status (*command)(const rrdm_config*, char**) = nullptr;
  if (synth->parsed()) command = rrdm_synth;
  if (learn->parsed()) command = rrdm_learn;
  if (simulate->parsed()) command = rrdm_simulate;
  if (evaluate->parsed()) command = rrdm_evaluate;
  if (recover->parsed()) command = rrdm_recover;

  char* summary = nullptr;
  const rrdm_status result = command(cfg, &summary);
  if (summary) {
    std::printf("%s\n", summary);
    rrdm_string_free(summary);
  }
  if (result == RRDM_PARTIAL) {
    std::fprintf(stderr, "warning: some rollouts failed; see the manifest\n");
  } else if (result != RRDM_OK) {
    std::fprintf(stderr, "error (%s): %s\n", rrdm_status_name(result), rrdm_last_error());
  }
  rrdm_config_free(cfg);
  return exit_code(result);
}
