#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rrdm/harness.hpp"

namespace rrdm {

struct SynthSettings {
  int repeats = 30;
  double horizon = 3.0;  // N* of the reference driver
  double noise_std = 0.0;
  DemoMode mode = DemoMode::kBlockQuintic;
  std::vector<std::string> scenarios;  // empty: all built-in
};

struct RecoverSettings {
  int repeats = 2;
  double test_fraction = 0.5;
  bool supply_tau = true;
};

/// Everything a command needs. Serialized as one JSON document.
struct RunConfig {
  std::uint64_t seed = 42;
  std::filesystem::path data_dir = "data";
  std::filesystem::path model = "model.json";
  std::filesystem::path out = "out";
  std::filesystem::path samples_dir;  // evaluate: predicted trajectories
  std::string scenario;               // simulate: restrict to one scenario id
  double test_fraction = 5.0 / 30.0;
  int samples = 50;
  bool per_condition_horizons = false;

  std::optional<double> tau;  // learned from Steady segments when unset
  double d_s = 5.0;
  std::optional<double> v_d;  // overrides every log's sidecar value when set

  LearnerConfig learner;
  PlannerConfig planner;
  SynthSettings synth;
  RecoverSettings recover;

  /// Copies the shared constants into the learner and planner configs.
  void resolve();
  void validate() const;
};

/// Parses a config document; absent keys keep their defaults, unknown keys
/// are rejected. Throws Error(kSchema) or Error(kInvalidArgument).
RunConfig parse_run_config(std::string_view json_text);
std::string run_config_json(const RunConfig& config);

/// Sets one value addressed by a dotted path ("learner.max_iters") in a config
/// document. `value_json` is a JSON literal.
std::string override_config(std::string_view json_text, std::string_view dotted_key,
                            std::string_view value_json);

/// 64-bit FNV-1a, printed as 16 hex digits.
std::string content_hash(std::string_view bytes);
std::string file_hash(const std::filesystem::path& path);

struct CorpusEntry {
  std::string name;  // file stem
  LeaderFollowerLog log;
  std::string hash;  // of the CSV bytes
};

/// Every `<name>.csv` with a `<name>.json` sidecar in `dir`, sorted by name.
std::vector<CorpusEntry> load_corpus(const std::filesystem::path& dir);

enum class CommandStatus { kOk, kPartial };

struct CommandResult {
  CommandStatus status = CommandStatus::kOk;
  std::string summary_json;  // short machine-readable summary
};

/// Writes the synthetic corpus, ground_truth.json and a manifest into data_dir.
CommandResult cmd_synth(const RunConfig& config);
CommandResult cmd_learn(const RunConfig& config);
CommandResult cmd_simulate(const RunConfig& config);
CommandResult cmd_evaluate(const RunConfig& config);
CommandResult cmd_recover(const RunConfig& config);

}  // namespace rrdm
