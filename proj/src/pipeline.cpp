#include "rrdm/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rrdm/error.hpp"
#include "rrdm/parallel.hpp"

namespace rrdm {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

constexpr const char* kSeedScheme =
    "demos: derive(seed,[1]) then [scenario,repeat]; split: derive(seed,[2]) then [scenario]; "
    "rollouts: derive(seed,[3,fnv64(log name),sample])";

// Reads keys out of one JSON object and rejects the ones nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) {
      fail(ErrorKind::kSchema, (where_.empty() ? "config" : where_) + " must be a JSON object");
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      fail(ErrorKind::kSchema, qualified(key) + " has the wrong type");
    }
  }

  void get_optional(const char* key, std::optional<double>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    if (j_.at(key).is_null()) {
      out.reset();
      return;
    }
    double v = 0.0;
    get(key, v);
    out = v;
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) fail(ErrorKind::kSchema, "unknown config key " + qualified(k));
    }
  }

 private:
  std::string qualified(const std::string& key) const {
    return where_.empty() ? key : where_ + "." + key;
  }

  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

std::string mode_name(DemoMode m) {
  return m == DemoMode::kBlockQuintic ? "block_quintic" : "receding_horizon";
}

DemoMode parse_mode(const std::string& s) {
  if (s == "block_quintic") return DemoMode::kBlockQuintic;
  if (s == "receding_horizon") return DemoMode::kRecedingHorizon;
  fail(ErrorKind::kInvalidArgument, "synth.mode must be block_quintic or receding_horizon");
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorKind::kIo, "failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    fail(ErrorKind::kIo, "cannot create output directory " + dir.string());
  }
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Collects output files with their hashes for the manifest.
class OutputSet {
 public:
  explicit OutputSet(fs::path root) : root_(std::move(root)) {}

  void write(const fs::path& rel, const std::string& text) {
    const auto path = root_ / rel;
    if (path.has_parent_path()) ensure_dir(path.parent_path());
    write_text(path, text);
    files_.push_back({rel.generic_string(), content_hash(text)});
  }

  ordered_json manifest_entries() const {
    auto sorted = files_;
    std::sort(sorted.begin(), sorted.end());
    ordered_json arr = ordered_json::array();
    for (const auto& [name, hash] : sorted) arr.push_back({{"name", name}, {"hash", hash}});
    return arr;
  }

  const fs::path& root() const { return root_; }

 private:
  fs::path root_;
  std::vector<std::pair<std::string, std::string>> files_;
};

void write_manifest(OutputSet& out, const std::string& command, const RunConfig& config,
                    const ordered_json& inputs, ordered_json extra = ordered_json::object()) {
  ordered_json m;
  m["command"] = command;
  m["seed"] = config.seed;
  m["seed_scheme"] = kSeedScheme;
  m["config"] = ordered_json::parse(run_config_json(config));
  m["inputs"] = inputs;
  m["outputs"] = out.manifest_entries();
  for (auto& [k, v] : extra.items()) m[k] = v;
  write_text(out.root() / "manifest.json", m.dump(2) + "\n");
}

std::string segments_csv(const LearningOutcome& outcome, std::span<const double> horizons) {
  std::ostringstream s;
  s << "segment_id,condition,best_N,final_grad_norm,iterations,converged,w1,w2,w3,w4";
  for (double n : horizons) s << ",grad_norm_N" << format_real(n);
  s << '\n';
  for (const auto& seg : outcome.segments) {
    const auto& best = seg.per_horizon.at(seg.best_horizon);
    s << seg.segment_id << ',' << to_string(seg.condition) << ',' << format_real(seg.best_horizon)
      << ',' << format_real(seg.final_grad_norm) << ',' << best.iterations << ','
      << (best.converged ? 1 : 0);
    for (std::size_t i = 0; i < 4; ++i) {
      s << ',';
      if (i < seg.weights.size()) s << format_real(seg.weights[i]);
    }
    for (double n : horizons) {
      s << ',';
      auto it = seg.per_horizon.find(n);
      if (it != seg.per_horizon.end()) s << format_real(it->second.final_grad_norm);
    }
    s << '\n';
  }
  return s.str();
}

// Gradient-norm curves of the selected horizon, one row per iteration.
std::string grad_traces_csv(const LearningOutcome& outcome) {
  std::ostringstream s;
  s << "segment_id,N,iteration,grad_norm\n";
  for (const auto& seg : outcome.segments) {
    const auto& trace = seg.per_horizon.at(seg.best_horizon).grad_trace;
    for (std::size_t i = 0; i < trace.size(); ++i) {
      s << seg.segment_id << ',' << format_real(seg.best_horizon) << ',' << i + 1 << ','
        << format_real(trace[i]) << '\n';
    }
  }
  return s.str();
}

ordered_json pmf_json(const HorizonDistribution& h) {
  ordered_json j = ordered_json::object();
  for (std::size_t i = 0; i < h.support.size(); ++i) j[format_real(h.support[i])] = h.probs[i];
  return j;
}

ordered_json corpus_inputs(const std::vector<CorpusEntry>& corpus) {
  ordered_json arr = ordered_json::array();
  for (const auto& e : corpus) arr.push_back({{"name", e.name + ".csv"}, {"hash", e.hash}});
  return arr;
}

std::vector<CorpusEntry> load_inputs(const RunConfig& config) {
  auto corpus = load_corpus(config.data_dir);
  if (config.v_d) {
    for (auto& e : corpus) e.log.v_d = *config.v_d;
  }
  return corpus;
}

// Columns t, ego_vel and ego_acc (plus N_sampled when present) of a CSV with a header.
struct SampleTrack {
  std::vector<TrajectoryPoint> points;
  std::vector<double> horizons;
};

SampleTrack read_sample_csv(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::kParse, path.string() + ": empty file");
  auto split = [](const std::string& l) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      const auto comma = l.find(',', start);
      cells.push_back(l.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (!cells.empty() && !cells.back().empty() && cells.back().back() == '\r') cells.back().pop_back();
    return cells;
  };
  const auto header = split(line);
  auto column = [&](const char* name) -> std::optional<std::size_t> {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto ct = column("t"), cv = column("ego_vel"), ca = column("ego_acc"), cn = column("N_sampled");
  if (!ct || !cv || !ca) {
    fail(ErrorKind::kParse, path.string() + ": header needs t, ego_vel and ego_acc columns");
  }
  SampleTrack track;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto cells = split(line);
    auto number = [&](std::size_t c) {
      if (c >= cells.size()) {
        fail(ErrorKind::kParse, path.string() + ":" + std::to_string(row) + ": missing column");
      }
      double v = 0.0;
      const auto& s = cells[c];
      const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
      if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
        fail(ErrorKind::kParse, path.string() + ":" + std::to_string(row) + ": bad number '" + s + "'");
      }
      return v;
    };
    track.points.push_back({number(*ct), number(*cv), number(*ca)});
    if (cn) track.horizons.push_back(number(*cn));
  }
  if (track.points.empty()) fail(ErrorKind::kParse, path.string() + ": no data rows");
  return track;
}

std::vector<fs::path> sorted_csvs(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".csv") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string padded(std::size_t v, int width) {
  std::string s = std::to_string(v);
  if (static_cast<int>(s.size()) < width) s.insert(0, static_cast<std::size_t>(width) - s.size(), '0');
  return s;
}

}  // namespace

void RunConfig::resolve() {
  learner.tau = tau;
  learner.d_s = d_s;
  planner.d_s = d_s;
  planner.thresholds = learner.thresholds;
}

void RunConfig::validate() const {
  learner.validate();
  planner.validate();
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    fail(ErrorKind::kInvalidArgument, "test_fraction must lie in [0, 1)");
  }
  if (samples < 1) fail(ErrorKind::kInvalidArgument, "samples must be >= 1");
  if (synth.repeats < 1) fail(ErrorKind::kInvalidArgument, "synth.repeats must be >= 1");
  if (!(synth.noise_std >= 0.0)) fail(ErrorKind::kInvalidArgument, "synth.noise_std must be >= 0");
  if (recover.repeats < 2) fail(ErrorKind::kInvalidArgument, "recover.repeats must be >= 2");
  if (!(recover.test_fraction > 0.0 && recover.test_fraction < 1.0)) {
    fail(ErrorKind::kInvalidArgument, "recover.test_fraction must lie in (0, 1)");
  }
  if (v_d && !(*v_d > 0.0)) fail(ErrorKind::kInvalidArgument, "v_d must be positive");
}

RunConfig parse_run_config(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    fail(ErrorKind::kSchema, std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  ObjectReader top(j, "");
  top.get("seed", c.seed);
  std::string path;
  auto get_path = [&](const char* key, fs::path& out) {
    path = out.string();
    top.get(key, path);
    out = path;
  };
  get_path("data_dir", c.data_dir);
  get_path("model", c.model);
  get_path("out", c.out);
  get_path("samples_dir", c.samples_dir);
  top.get("scenario", c.scenario);
  top.get("test_fraction", c.test_fraction);
  top.get("samples", c.samples);
  top.get("per_condition_horizons", c.per_condition_horizons);

  if (const auto* k = top.child("constants")) {
    ObjectReader r(*k, "constants");
    r.get_optional("tau", c.tau);
    r.get("d_s", c.d_s);
    r.get_optional("v_d", c.v_d);
    r.finish();
  }
  if (const auto* t = top.child("thresholds")) {
    ObjectReader r(*t, "thresholds");
    auto& th = c.learner.thresholds;
    r.get("steady_thw_max", th.steady_thw_max);
    r.get("steady_ttci_max", th.steady_ttci_max);
    r.get("free_thw_min", th.free_thw_min);
    r.get("free_ttci_max", th.free_ttci_max);
    r.get("free_gap_min", th.free_gap_min);
    r.get("free_speed_min", th.free_speed_min);
    r.finish();
  }
  if (const auto* l = top.child("learner")) {
    ObjectReader r(*l, "learner");
    auto& lc = c.learner;
    r.get("learning_rate", lc.learning_rate);
    r.get("grad_tol", lc.grad_tol);
    r.get("max_iters", lc.max_iters);
    r.get("horizons", lc.horizons);
    r.get("segment_length", lc.segment_length);
    r.get("threads", lc.threads);
    if (const auto* in = r.child("inner")) {
      ObjectReader ri(*in, "learner.inner");
      ri.get("max_iterations", lc.inner.max_iterations);
      ri.get("max_evaluations", lc.inner.max_evaluations);
      ri.get("gradient_tolerance", lc.inner.gradient_tolerance);
      ri.get("fd_step", lc.inner.fd_step);
      ri.finish();
    }
    r.finish();
  }
  if (const auto* p = top.child("planner")) {
    ObjectReader r(*p, "planner");
    auto& pc = c.planner;
    r.get("dt", pc.dt);
    r.get("v_min", pc.v_min);
    r.get_optional("v_max", pc.v_max);
    r.get("a_min", pc.a_min);
    r.get("a_max", pc.a_max);
    r.get("penalty_weight", pc.penalty_weight);
    r.get("replan_every", pc.replan_every);
    std::string w(to_string(pc.resample_W)), n(to_string(pc.resample_N));
    r.get("resample_W", w);
    r.get("resample_N", n);
    pc.resample_W = parse_resample_policy(w);
    pc.resample_N = parse_resample_policy(n);
    r.get("acc_noise_std", pc.acc_noise_std);
    r.get("audit_tolerance", pc.audit_tolerance);
    if (const auto* s = r.child("solver")) {
      ObjectReader rs(*s, "planner.solver");
      rs.get("max_iterations", pc.solver.max_iterations);
      rs.get("max_evaluations", pc.solver.max_evaluations);
      rs.get("gradient_tolerance", pc.solver.gradient_tolerance);
      rs.get("function_tolerance", pc.solver.function_tolerance);
      rs.finish();
    }
    r.finish();
  }
  if (const auto* s = top.child("synth")) {
    ObjectReader r(*s, "synth");
    r.get("repeats", c.synth.repeats);
    r.get("horizon", c.synth.horizon);
    r.get("noise_std", c.synth.noise_std);
    std::string mode = mode_name(c.synth.mode);
    r.get("mode", mode);
    c.synth.mode = parse_mode(mode);
    r.get("scenarios", c.synth.scenarios);
    r.finish();
  }
  if (const auto* s = top.child("recover")) {
    ObjectReader r(*s, "recover");
    r.get("repeats", c.recover.repeats);
    r.get("test_fraction", c.recover.test_fraction);
    r.get("supply_tau", c.recover.supply_tau);
    r.finish();
  }
  top.finish();
  c.resolve();
  c.validate();
  return c;
}

std::string run_config_json(const RunConfig& c) {
  const auto& lc = c.learner;
  const auto& pc = c.planner;
  const auto& th = lc.thresholds;
  ordered_json j;
  j["seed"] = c.seed;
  j["data_dir"] = c.data_dir.generic_string();
  j["model"] = c.model.generic_string();
  j["out"] = c.out.generic_string();
  j["samples_dir"] = c.samples_dir.generic_string();
  j["scenario"] = c.scenario;
  j["test_fraction"] = c.test_fraction;
  j["samples"] = c.samples;
  j["per_condition_horizons"] = c.per_condition_horizons;
  j["constants"] = {{"tau", optional_json(c.tau)}, {"d_s", c.d_s}, {"v_d", optional_json(c.v_d)}};
  j["thresholds"] = {{"steady_thw_max", th.steady_thw_max}, {"steady_ttci_max", th.steady_ttci_max},
                     {"free_thw_min", th.free_thw_min},     {"free_ttci_max", th.free_ttci_max},
                     {"free_gap_min", th.free_gap_min},     {"free_speed_min", th.free_speed_min}};
  j["learner"] = {{"learning_rate", lc.learning_rate},
                  {"grad_tol", lc.grad_tol},
                  {"max_iters", lc.max_iters},
                  {"horizons", lc.horizons},
                  {"segment_length", lc.segment_length},
                  {"threads", lc.threads},
                  {"inner",
                   {{"max_iterations", lc.inner.max_iterations},
                    {"max_evaluations", lc.inner.max_evaluations},
                    {"gradient_tolerance", lc.inner.gradient_tolerance},
                    {"fd_step", lc.inner.fd_step}}}};
  j["planner"] = {{"dt", pc.dt},
                  {"v_min", pc.v_min},
                  {"v_max", optional_json(pc.v_max)},
                  {"a_min", pc.a_min},
                  {"a_max", pc.a_max},
                  {"penalty_weight", pc.penalty_weight},
                  {"replan_every", pc.replan_every},
                  {"resample_W", std::string(to_string(pc.resample_W))},
                  {"resample_N", std::string(to_string(pc.resample_N))},
                  {"acc_noise_std", pc.acc_noise_std},
                  {"audit_tolerance", pc.audit_tolerance},
                  {"solver",
                   {{"max_iterations", pc.solver.max_iterations},
                    {"max_evaluations", pc.solver.max_evaluations},
                    {"gradient_tolerance", pc.solver.gradient_tolerance},
                    {"function_tolerance", pc.solver.function_tolerance}}}};
  j["synth"] = {{"repeats", c.synth.repeats},
                {"horizon", c.synth.horizon},
                {"noise_std", c.synth.noise_std},
                {"mode", mode_name(c.synth.mode)},
                {"scenarios", c.synth.scenarios}};
  j["recover"] = {{"repeats", c.recover.repeats},
                  {"test_fraction", c.recover.test_fraction},
                  {"supply_tau", c.recover.supply_tau}};
  return j.dump(2) + "\n";
}

std::string override_config(std::string_view json_text, std::string_view dotted_key,
                            std::string_view value_json) {
  ordered_json doc;
  ordered_json value;
  try {
    doc = json_text.empty() ? ordered_json::object() : ordered_json::parse(json_text);
  } catch (const json::exception& e) {
    fail(ErrorKind::kSchema, std::string("config is not valid JSON: ") + e.what());
  }
  try {
    value = ordered_json::parse(value_json);
  } catch (const json::exception&) {
    // Bare words are taken as strings so paths need no quoting.
    value = std::string(value_json);
  }
  if (dotted_key.empty()) fail(ErrorKind::kInvalidArgument, "empty config key");
  ordered_json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted_key.find('.', start);
    const std::string part(dotted_key.substr(start, dot == std::string_view::npos ? dot : dot - start));
    if (part.empty()) fail(ErrorKind::kInvalidArgument, "malformed config key " + std::string(dotted_key));
    if (!node->is_object()) {
      fail(ErrorKind::kInvalidArgument, "config key " + std::string(dotted_key) + " crosses a value");
    }
    if (dot == std::string_view::npos) {
      (*node)[part] = value;
      break;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = ordered_json::object();
    start = dot + 1;
  }
  return doc.dump(2) + "\n";
}

std::string content_hash(std::string_view bytes) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(bytes)));
  return buf;
}

std::string file_hash(const fs::path& path) { return content_hash(read_text(path)); }

std::vector<CorpusEntry> load_corpus(const fs::path& dir) {
  if (!fs::is_directory(dir)) fail(ErrorKind::kIo, "data directory " + dir.string() + " does not exist");
  std::vector<CorpusEntry> out;
  for (const auto& csv : sorted_csvs(dir)) {
    auto sidecar = csv;
    sidecar.replace_extension(".json");
    if (!fs::is_regular_file(sidecar)) continue;
    CorpusEntry e;
    e.name = csv.stem().string();
    e.log = load_log_file(csv, sidecar);
    e.hash = file_hash(csv);
    out.push_back(std::move(e));
  }
  return out;
}

CommandResult cmd_synth(const RunConfig& input) {
  RunConfig config = input;
  config.resolve();
  config.validate();
  auto driver = reference_driver(config.synth.horizon);
  driver.noise_std = config.synth.noise_std;
  driver.mode = config.synth.mode;
  driver.constants.d_s = config.d_s;
  if (config.tau) driver.constants.tau = *config.tau;
  driver.thresholds = config.learner.thresholds;
  driver.segment_length = config.learner.segment_length;

  std::vector<LeaderScenario> scenarios;
  for (auto& s : builtin_scenarios()) {
    const auto& want = config.synth.scenarios;
    if (want.empty() || std::find(want.begin(), want.end(), s.id) != want.end()) {
      scenarios.push_back(std::move(s));
    }
  }
  for (const auto& id : config.synth.scenarios) {
    if (std::none_of(scenarios.begin(), scenarios.end(), [&](const auto& s) { return s.id == id; })) {
      fail(ErrorKind::kInvalidArgument, "unknown scenario '" + id + "'");
    }
  }
  ensure_dir(config.data_dir);
  const auto logs = generate_synthetic_demos(driver, scenarios, config.synth.repeats,
                                             derive_seed(config.seed, {1}), config.planner);

  OutputSet out(config.data_dir);
  const auto reps = static_cast<std::size_t>(config.synth.repeats);
  const int width = std::max<int>(2, static_cast<int>(std::to_string(reps - 1).size()));
  std::map<std::string, std::size_t> condition_counts;
  for (auto c : kAllConditions) condition_counts[std::string(to_string(c))] = 0;
  for (std::size_t i = 0; i < logs.size(); ++i) {
    const auto& log = logs[i];
    const std::string name = log.scenario_id + "_r" + padded(i % reps, width);
    std::ostringstream csv;
    write_log_csv(csv, log);
    out.write(name + ".csv", csv.str());
    ordered_json side = {{"scenario_id", log.scenario_id}, {"v_d", log.v_d}, {"rate_hz", log.rate_hz}};
    out.write(name + ".json", side.dump(2) + "\n");
    for (const auto& seg : segment_log(log, config.learner.segment_length)) {
      ++condition_counts[std::string(to_string(classify_condition(seg, driver.thresholds)))];
    }
  }

  ordered_json truth;
  truth["horizon"] = driver.horizon;
  truth["noise_std"] = driver.noise_std;
  truth["mode"] = mode_name(driver.mode);
  truth["constants"] = {{"tau", driver.constants.tau}, {"d_s", driver.constants.d_s}};
  for (const auto& [c, w] : driver.weights) {
    const std::string name(to_string(c));
    truth["weights"][name] = w;
    ordered_json ranges = ordered_json::array();
    for (const auto& r : driver.table.at(c)) ranges.push_back({{"min", r.min}, {"max", r.max}});
    truth["table"][name] = ranges;
  }
  out.write("ground_truth.json", truth.dump(2) + "\n");

  ordered_json summary;
  summary["logs"] = logs.size();
  summary["scenarios"] = scenarios.size();
  summary["repeats"] = config.synth.repeats;
  summary["segments_by_condition"] = condition_counts;
  write_manifest(out, "synth", config, ordered_json::array(), {{"summary", summary}});
  return {CommandStatus::kOk, summary.dump()};
}

CommandResult cmd_learn(const RunConfig& input) {
  RunConfig config = input;
  config.resolve();
  config.validate();
  const auto corpus = load_inputs(config);
  if (corpus.empty()) {
    fail(ErrorKind::kInvalidArgument, "no logs with sidecars in " + config.data_dir.string());
  }
  std::vector<std::string> ids;
  for (const auto& e : corpus) ids.push_back(e.log.scenario_id);
  const auto split = split_indices(ids, config.test_fraction, derive_seed(config.seed, {2}));
  if (split.train.empty()) fail(ErrorKind::kInvalidArgument, "training set is empty");

  std::vector<LeaderFollowerLog> train;
  ordered_json train_names = ordered_json::array(), test_names = ordered_json::array();
  for (auto i : split.train) {
    train.push_back(corpus[i].log);
    train_names.push_back(corpus[i].name);
  }
  for (auto i : split.test) test_names.push_back(corpus[i].name);

  const auto outcome = learn_all(train, config.learner);
  std::string corpus_bytes;
  for (const auto& e : corpus) corpus_bytes += e.name + ":" + e.hash + "\n";

  ordered_json provenance;
  provenance["seed"] = config.seed;
  provenance["corpus_hash"] = content_hash(corpus_bytes);
  provenance["train"] = train_names;
  provenance["test"] = test_names;
  provenance["config"] = ordered_json::parse(run_config_json(config));
  const auto model = fit_driver_model(outcome, config.learner.horizons, provenance.dump(),
                                      config.per_condition_horizons);

  if (config.model.has_parent_path()) ensure_dir(config.model.parent_path());
  const auto model_text = model_to_json(model);
  write_text(config.model, model_text);

  ensure_dir(config.out);
  OutputSet out(config.out);
  out.write("segments.csv", segments_csv(outcome, config.learner.horizons));
  out.write("grad_traces.csv", grad_traces_csv(outcome));

  ordered_json summary;
  summary["train_logs"] = split.train.size();
  summary["test_logs"] = split.test.size();
  summary["segments"] = outcome.segments.size();
  summary["tau"] = outcome.constants.tau;
  ordered_json pools = ordered_json::object();
  for (const auto& [c, p] : outcome.pools) pools[std::string(to_string(c))] = p.size();
  summary["pools"] = pools;
  summary["P_N"] = pmf_json(model.horizons);
  summary["warnings"] = model.warnings;
  summary["model"] = config.model.generic_string();
  summary["model_hash"] = content_hash(model_text);
  write_manifest(out, "learn", config, corpus_inputs(corpus), {{"summary", summary}});
  return {CommandStatus::kOk, summary.dump()};
}

CommandResult cmd_simulate(const RunConfig& input) {
  RunConfig config = input;
  config.resolve();
  config.validate();
  const auto model = load_model(config.model);
  const auto model_hash = file_hash(config.model);
  const auto corpus = load_inputs(config);

  std::vector<const CorpusEntry*> targets;
  std::set<std::string> wanted;
  bool use_split = false;
  try {
    const auto prov = json::parse(model.provenance_json);
    if (prov.contains("test") && !prov.at("test").empty()) {
      for (const auto& n : prov.at("test")) wanted.insert(n.get<std::string>());
      use_split = true;
    }
  } catch (const json::exception&) {
    fail(ErrorKind::kSchema, "model provenance is malformed");
  }
  for (const auto& e : corpus) {
    if (use_split && !wanted.count(e.name)) continue;
    if (!config.scenario.empty() && e.log.scenario_id != config.scenario) continue;
    targets.push_back(&e);
    wanted.erase(e.name);
  }
  if (use_split && config.scenario.empty() && !wanted.empty()) {
    fail(ErrorKind::kInvalidArgument, "held-out log '" + *wanted.begin() + "' is missing from " +
                                          config.data_dir.string());
  }
  if (targets.empty()) fail(ErrorKind::kInvalidArgument, "no logs to simulate");

  ensure_dir(config.out);
  const auto n_samples = static_cast<std::size_t>(config.samples);
  const int width = std::max<int>(3, static_cast<int>(std::to_string(n_samples - 1).size()));
  struct Job {
    std::uint64_t seed = 0;
    std::string csv;
    std::string error;
    ErrorKind error_kind = ErrorKind::kInfeasible;
    ConstraintAudit audit;
  };
  std::vector<Job> jobs(targets.size() * n_samples);
  parallel_for(jobs.size(), config.learner.threads, [&](std::size_t i) {
    const auto& e = *targets[i / n_samples];
    const std::size_t k = i % n_samples;
    auto& job = jobs[i];
    job.seed = derive_seed(config.seed, {3, fnv1a(e.name), k});
    try {
      const auto r = rollout_scenario(e.log, model, config.planner, job.seed);
      job.audit = audit_rollout(r);
      std::ostringstream s;
      write_rollout_csv(s, r);
      job.csv = s.str();
    } catch (const Error& err) {
      job.error = err.what();
      job.error_kind = err.kind();
    }
  });

  OutputSet out(config.out);
  ordered_json records = ordered_json::array();
  std::size_t failures = 0, violations = 0, ok = 0;
  double min_margin = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const auto dir = config.out / targets[t]->name;
    if (fs::is_directory(dir)) {
      for (const auto& old : sorted_csvs(dir)) {
        if (old.filename().string().rfind("sample_", 0) == 0) fs::remove(old);
      }
    }
    for (std::size_t k = 0; k < n_samples; ++k) {
      const auto& job = jobs[t * n_samples + k];
      const std::string file = targets[t]->name + "/sample_" + padded(k, width) + ".csv";
      ordered_json rec = {{"log", targets[t]->name}, {"sample", k}, {"seed", job.seed}};
      if (!job.error.empty()) {
        ++failures;
        rec["status"] = job.error_kind == ErrorKind::kMissingCondition ? "missing_condition"
                        : job.error_kind == ErrorKind::kInfeasible     ? "infeasible"
                                                                       : "error";
        rec["error"] = job.error;
      } else {
        ++ok;
        out.write(file, job.csv);
        violations += job.audit.violations;
        min_margin = std::min(min_margin, job.audit.min_gap_margin);
        rec["status"] = job.audit.violations ? "constraint_violation" : "ok";
        rec["file"] = file;
        rec["violations"] = job.audit.violations;
      }
      records.push_back(std::move(rec));
    }
  }

  ordered_json inputs = ordered_json::array();
  inputs.push_back({{"name", config.model.filename().string()}, {"hash", model_hash}});
  for (const auto* e : targets) inputs.push_back({{"name", e->name + ".csv"}, {"hash", e->hash}});
  ordered_json summary;
  summary["logs"] = targets.size();
  summary["samples_per_log"] = n_samples;
  summary["rollouts"] = ok;
  summary["failures"] = failures;
  summary["violations"] = violations;
  summary["min_gap_margin"] = ok ? json(min_margin) : json(nullptr);
  write_manifest(out, "simulate", config, inputs, {{"summary", summary}, {"samples", records}});
  const bool partial = failures > 0 || violations > 0;
  return {partial ? CommandStatus::kPartial : CommandStatus::kOk, summary.dump()};
}

CommandResult cmd_evaluate(const RunConfig& input) {
  RunConfig config = input;
  config.resolve();
  config.validate();
  if (config.samples_dir.empty()) fail(ErrorKind::kInvalidArgument, "evaluate needs a samples directory");
  if (!fs::is_directory(config.samples_dir)) {
    fail(ErrorKind::kIo, "samples directory " + config.samples_dir.string() + " does not exist");
  }
  const auto observed = load_inputs(config);
  std::map<std::string, const CorpusEntry*> by_name;
  for (const auto& e : observed) by_name[e.name] = &e;

  // One predicted entry per log: a directory of sample CSVs or a single CSV.
  std::map<std::string, std::vector<fs::path>> predicted;
  for (const auto& e : fs::directory_iterator(config.samples_dir)) {
    if (e.is_directory()) {
      auto files = sorted_csvs(e.path());
      if (!files.empty()) predicted[e.path().filename().string()] = std::move(files);
    } else if (e.is_regular_file() && e.path().extension() == ".csv") {
      predicted[e.path().stem().string()] = {e.path()};
    }
  }
  if (predicted.empty()) fail(ErrorKind::kInvalidArgument, "no predicted trajectories found");
  for (const auto& [name, files] : predicted) {
    if (!by_name.count(name)) {
      fail(ErrorKind::kInvalidArgument, "mismatched scenario sets: no observed log named '" + name + "'");
    }
  }

  ensure_dir(config.out);
  OutputSet out(config.out);
  ordered_json inputs = ordered_json::array();
  std::ostringstream rmse_rows;
  rmse_rows << "log,scenario,samples,speed_rmse,acc_rmse\n";
  struct Acc {
    std::size_t logs = 0;
    double speed = 0.0, acc = 0.0;
  };
  std::map<std::string, Acc> per_scenario;
  std::map<std::string, std::map<double, std::size_t>> horizon_counts;
  Acc total;
  for (const auto& [name, files] : predicted) {
    const auto& obs = *by_name.at(name);
    inputs.push_back({{"name", name + ".csv"}, {"hash", obs.hash}});
    std::vector<std::vector<TrajectoryPoint>> runs;
    for (const auto& f : files) {
      auto track = read_sample_csv(f);
      inputs.push_back({{"name", fs::relative(f, config.samples_dir).generic_string()},
                        {"hash", file_hash(f)}});
      for (double n : track.horizons) ++horizon_counts[obs.log.scenario_id][n];
      runs.push_back(std::move(track.points));
    }
    const auto observed_track = trajectory_of(obs.log);
    const auto mean = mean_trajectory(runs);
    RmseResult err;
    try {
      err = rmse(observed_track, mean);
    } catch (const Error& e) {
      fail(ErrorKind::kInvalidArgument, "log '" + name + "': " + e.what());
    }
    rmse_rows << name << ',' << obs.log.scenario_id << ',' << runs.size() << ','
              << format_real(err.speed) << ',' << format_real(err.acc) << '\n';
    auto& a = per_scenario[obs.log.scenario_id];
    ++a.logs;
    a.speed += err.speed;
    a.acc += err.acc;
    ++total.logs;
    total.speed += err.speed;
    total.acc += err.acc;

    std::ostringstream traj;
    traj << "t,observed_vel,mean_vel,observed_acc,mean_acc\n";
    for (std::size_t k = 0; k < mean.size(); ++k) {
      traj << format_real(mean[k].t) << ',' << format_real(observed_track[k].vel) << ','
           << format_real(mean[k].vel) << ',' << format_real(observed_track[k].acc) << ','
           << format_real(mean[k].acc) << '\n';
    }
    out.write("trajectories/" + name + ".csv", traj.str());
  }
  out.write("rmse.csv", rmse_rows.str());

  const double n = static_cast<double>(total.logs);
  std::ostringstream table;
  table << "scenario,logs,speed_rmse,acc_rmse\n";
  for (const auto& [id, a] : per_scenario) {
    const double m = static_cast<double>(a.logs);
    table << id << ',' << a.logs << ',' << format_real(a.speed / m) << ',' << format_real(a.acc / m)
          << '\n';
  }
  table << "all," << total.logs << ',' << format_real(total.speed / n) << ','
        << format_real(total.acc / n) << '\n';
  out.write("rmse_table.csv", table.str());

  ordered_json pmf = ordered_json::object();
  if (!horizon_counts.empty()) {
    std::ostringstream rows;
    rows << "scenario,N,probability\n";
    for (const auto& [id, counts] : horizon_counts) {
      std::size_t sum = 0;
      for (const auto& [h, c] : counts) sum += c;
      for (const auto& [h, c] : counts) {
        const double p = static_cast<double>(c) / static_cast<double>(sum);
        rows << id << ',' << format_real(h) << ',' << format_real(p) << '\n';
        pmf[id][format_real(h)] = p;
      }
    }
    out.write("pmf.csv", rows.str());
  }

  ordered_json summary;
  summary["logs"] = total.logs;
  summary["speed_rmse"] = total.speed / n;
  summary["acc_rmse"] = total.acc / n;
  summary["pmf"] = pmf;
  write_manifest(out, "evaluate", config, inputs, {{"summary", summary}});
  return {CommandStatus::kOk, summary.dump()};
}

CommandResult cmd_recover(const RunConfig& input) {
  RunConfig config = input;
  config.resolve();
  config.validate();
  auto driver = reference_driver(config.synth.horizon);
  driver.noise_std = config.synth.noise_std;
  driver.mode = config.synth.mode;
  driver.constants.d_s = config.d_s;
  if (config.tau) driver.constants.tau = *config.tau;
  driver.thresholds = config.learner.thresholds;
  driver.segment_length = config.learner.segment_length;

  RecoveryConfig rc;
  rc.learner = config.learner;
  rc.planner = config.planner;
  rc.repeats = config.recover.repeats;
  rc.test_fraction = config.recover.test_fraction;
  rc.samples = config.samples;
  rc.scenario_ids = config.synth.scenarios;
  rc.supply_tau = config.recover.supply_tau;
  rc.per_condition_horizons = config.per_condition_horizons;
  const auto rep = run_recovery_experiment(driver, rc, config.seed);

  ensure_dir(config.out);
  OutputSet out(config.out);
  ordered_json report;
  report["true_horizon"] = rep.true_horizon;
  report["segments"] = rep.segments;
  report["horizon_recovery"] = rep.horizon_recovery;
  report["converged_fraction"] = rep.converged_fraction;
  report["median_iterations"] = rep.median_iterations;
  report["trace_decreasing"] = rep.trace_decreasing;
  report["traces_checked"] = rep.traces_checked;
  ordered_json pmf = ordered_json::object();
  for (const auto& [h, p] : rep.pmf) pmf[format_real(h)] = p;
  report["P_N"] = pmf;
  ordered_json conds = ordered_json::object();
  for (const auto& [c, cr] : rep.conditions) {
    conds[std::string(to_string(c))] = {{"pool_size", cr.pool_size},
                                        {"cosine", cr.cosine},
                                        {"mean_learned", cr.mean_learned},
                                        {"reference", cr.reference}};
  }
  report["conditions"] = conds;
  report["heldout_rmse"] = {{"speed", rep.heldout_rmse.speed}, {"acc", rep.heldout_rmse.acc}};
  report["rollouts"] = rep.rollouts;
  report["rollout_failures"] = rep.rollout_failures;
  report["first_failure"] = rep.first_failure;
  report["constraint_violations"] = rep.constraint_violations;
  report["min_gap_margin"] = rep.min_gap_margin;
  out.write("report.json", report.dump(2) + "\n");
  out.write("segments.csv", segments_csv(rep.learning, config.learner.horizons));
  out.write("grad_traces.csv", grad_traces_csv(rep.learning));
  out.write("model.json", model_to_json(rep.model));
  write_manifest(out, "recover", config, ordered_json::array());

  ordered_json summary;
  summary["horizon_recovery"] = rep.horizon_recovery;
  summary["converged_fraction"] = rep.converged_fraction;
  summary["P_N"] = pmf;
  summary["heldout_rmse"] = report["heldout_rmse"];
  summary["rollout_failures"] = rep.rollout_failures;
  summary["constraint_violations"] = rep.constraint_violations;
  const bool partial = rep.rollout_failures > 0 || rep.constraint_violations > 0;
  return {partial ? CommandStatus::kPartial : CommandStatus::kOk, summary.dump()};
}

}  // namespace rrdm
