#include "rrdm/trajectory.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rrdm/error.hpp"

namespace rrdm {
namespace {

constexpr double kTimeTolerance = 1e-6;

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_real(const std::string& text, std::size_t line_no, const char* column) {
  double value = 0.0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (text.empty() || ec != std::errc() || ptr != end || !std::isfinite(value)) {
    fail(ErrorKind::kParse, "line " + std::to_string(line_no) + ": invalid value '" + text +
                                "' in column " + column);
  }
  return value;
}

}  // namespace

std::string format_real(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

LeaderFollowerLog load_log(std::istream& csv, double rate_hz, double v_d,
                           std::string scenario_id) {
  if (!(rate_hz > 0.0)) fail(ErrorKind::kInvalidArgument, "rate_hz must be positive");

  std::string line;
  std::size_t line_no = 0;
  do {
    if (!std::getline(csv, line)) fail(ErrorKind::kParse, "missing header row");
    ++line_no;
  } while (trim(line).empty());

  const auto header = split_csv(trim(line));
  static const char* kRequired[] = {"t", "leader_pos", "leader_vel", "ego_pos", "ego_vel"};
  const bool has_acc = header.size() == 6 && header[5] == "ego_acc";
  if (header.size() < 5 || header.size() > 6 || (header.size() == 6 && !has_acc)) {
    fail(ErrorKind::kParse,
         "line 1: expected header t,leader_pos,leader_vel,ego_pos,ego_vel[,ego_acc]");
  }
  for (std::size_t i = 0; i < 5; ++i) {
    if (header[i] != kRequired[i]) {
      fail(ErrorKind::kParse, "line 1: unexpected column '" + header[i] + "', expected '" +
                                  kRequired[i] + "'");
    }
  }

  LeaderFollowerLog log;
  log.scenario_id = std::move(scenario_id);
  log.rate_hz = rate_hz;
  log.v_d = v_d;

  static const char* kColumns[] = {"t", "leader_pos", "leader_vel", "ego_pos", "ego_vel",
                                   "ego_acc"};
  while (std::getline(csv, line)) {
    ++line_no;
    const auto text = trim(line);
    if (text.empty()) continue;
    const auto fields = split_csv(text);
    if (fields.size() != header.size()) {
      fail(ErrorKind::kParse, "line " + std::to_string(line_no) + ": expected " +
                                  std::to_string(header.size()) + " fields, got " +
                                  std::to_string(fields.size()));
    }
    std::array<double, 6> v{};
    for (std::size_t i = 0; i < fields.size(); ++i) v[i] = parse_real(fields[i], line_no, kColumns[i]);
    log.samples.push_back({v[0], v[1], v[2], v[3], v[4], v[5]});
  }

  if (!has_acc && !log.samples.empty()) {
    auto& s = log.samples;
    const double dt = log.dt();
    const std::size_t n = s.size();
    if (n == 1) {
      s[0].ego_acc = 0.0;
    } else {
      s[0].ego_acc = (s[1].ego_vel - s[0].ego_vel) / dt;
      s[n - 1].ego_acc = (s[n - 1].ego_vel - s[n - 2].ego_vel) / dt;
      for (std::size_t k = 1; k + 1 < n; ++k) {
        s[k].ego_acc = (s[k + 1].ego_vel - s[k - 1].ego_vel) / (2.0 * dt);
      }
    }
  }

  validate_log(log);
  return log;
}

void validate_log(const LeaderFollowerLog& log) {
  const double dt = log.dt();
  for (std::size_t k = 0; k < log.samples.size(); ++k) {
    const auto& s = log.samples[k];
    const std::string row = "row " + std::to_string(k + 1);
    if (k > 0) {
      const double step = s.t - log.samples[k - 1].t;
      if (!(step > 0.0)) {
        fail(ErrorKind::kValidation, row + ": time is not strictly increasing (t=" +
                                         format_real(s.t) + ")");
      }
      if (std::abs(step - dt) > kTimeTolerance) {
        fail(ErrorKind::kValidation, row + ": time step " + format_real(step) +
                                         " s does not match 1/rate_hz = " + format_real(dt));
      }
    }
    if (s.leader_pos < s.ego_pos) {
      fail(ErrorKind::kValidation, row + ": leader is behind the ego vehicle");
    }
    if (s.ego_vel < 0.0) fail(ErrorKind::kValidation, row + ": negative ego velocity");
  }
}

ScenarioMeta load_sidecar(const std::filesystem::path& sidecar) {
  std::ifstream in(sidecar);
  if (!in) fail(ErrorKind::kIo, "cannot open sidecar " + sidecar.string());
  nlohmann::json j;
  try {
    in >> j;
    ScenarioMeta meta;
    meta.scenario_id = j.at("scenario_id").get<std::string>();
    meta.v_d = j.at("v_d").get<double>();
    meta.rate_hz = j.value("rate_hz", 10.0);
    return meta;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kSchema, sidecar.string() + ": " + e.what());
  }
}

void write_sidecar(const std::filesystem::path& sidecar, const ScenarioMeta& meta) {
  std::ofstream out(sidecar);
  if (!out) fail(ErrorKind::kIo, "cannot write " + sidecar.string());
  nlohmann::json j = {{"scenario_id", meta.scenario_id}, {"v_d", meta.v_d},
                      {"rate_hz", meta.rate_hz}};
  out << j.dump(2) << '\n';
}

LeaderFollowerLog load_log_file(const std::filesystem::path& csv,
                                const std::filesystem::path& sidecar) {
  const auto meta = load_sidecar(sidecar);
  std::ifstream in(csv);
  if (!in) fail(ErrorKind::kIo, "cannot open log " + csv.string());
  try {
    return load_log(in, meta.rate_hz, meta.v_d, meta.scenario_id);
  } catch (const Error& e) {
    throw Error(e.kind(), csv.string() + ": " + e.what());
  }
}

void write_log_csv(std::ostream& out, const LeaderFollowerLog& log) {
  out << "t,leader_pos,leader_vel,ego_pos,ego_vel,ego_acc\n";
  for (const auto& s : log.samples) {
    out << format_real(s.t) << ',' << format_real(s.leader_pos) << ','
        << format_real(s.leader_vel) << ',' << format_real(s.ego_pos) << ','
        << format_real(s.ego_vel) << ',' << format_real(s.ego_acc) << '\n';
  }
}

void save_log_files(const std::filesystem::path& csv, const std::filesystem::path& sidecar,
                    const LeaderFollowerLog& log) {
  std::ofstream out(csv);
  if (!out) fail(ErrorKind::kIo, "cannot write " + csv.string());
  write_log_csv(out, log);
  write_sidecar(sidecar, {log.scenario_id, log.v_d, log.rate_hz});
}

std::size_t steps_for(double duration_s, double rate_hz) {
  const double exact = duration_s * rate_hz;
  const double rounded = std::round(exact);
  if (!(duration_s > 0.0) || std::abs(exact - rounded) > 1e-6 || rounded < 1.0) {
    fail(ErrorKind::kInvalidArgument, "duration " + format_real(duration_s) +
                                          " s is not a whole number of sampling steps");
  }
  return static_cast<std::size_t>(rounded);
}

std::vector<TrajectorySegment> segment_log(const LeaderFollowerLog& log, double horizon_s) {
  if (!(horizon_s > 0.0)) fail(ErrorKind::kInvalidArgument, "segment length must be positive");
  const std::size_t len = steps_for(horizon_s, log.rate_hz);
  const std::size_t intervals = log.samples.empty() ? 0 : log.samples.size() - 1;
  const std::size_t count = intervals / len;
  if (count == 0) {
    fail(ErrorKind::kValidation, "log '" + log.scenario_id + "' (" +
                                     format_real(log.duration()) +
                                     " s) is shorter than one segment of " +
                                     format_real(horizon_s) + " s");
  }
  std::vector<TrajectorySegment> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    TrajectorySegment seg;
    seg.parent = log.scenario_id;
    seg.start_index = i * len;
    seg.duration_s = horizon_s;
    seg.rate_hz = log.rate_hz;
    seg.v_d = log.v_d;
    seg.samples.assign(log.samples.begin() + static_cast<std::ptrdiff_t>(i * len),
                       log.samples.begin() + static_cast<std::ptrdiff_t>((i + 1) * len));
    out.push_back(std::move(seg));
  }
  return out;
}

KinematicPoint eval_quintic(const QuinticCoeffs& c, double t) {
  const auto& y = c.y;
  // Horner form of r, r', r''.
  const double pos = ((((y[0] * t + y[1]) * t + y[2]) * t + y[3]) * t + y[4]) * t + y[5];
  const double vel = (((5.0 * y[0] * t + 4.0 * y[1]) * t + 3.0 * y[2]) * t + 2.0 * y[3]) * t + y[4];
  const double acc = ((20.0 * y[0] * t + 12.0 * y[1]) * t + 6.0 * y[2]) * t + 2.0 * y[3];
  return {pos, vel, acc};
}

QuinticCoeffs coeffs_from_initial_state(double pos0, double vel0, double acc0) {
  QuinticCoeffs c;
  c.y[5] = pos0;
  c.y[4] = vel0;
  c.y[3] = 0.5 * acc0;
  return c;
}

std::vector<Subsegment> partition_segment(const TrajectorySegment& seg, double horizon_s) {
  if (horizon_s > seg.duration_s + 1e-9) {
    fail(ErrorKind::kInvalidArgument, "planning horizon " + format_real(horizon_s) +
                                          " s exceeds segment length " +
                                          format_real(seg.duration_s) + " s");
  }
  const std::size_t len = steps_for(horizon_s, seg.rate_hz);
  const std::size_t count = seg.samples.size() / len;
  std::vector<Subsegment> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    Subsegment sub;
    sub.offset = k * len;
    sub.samples.assign(seg.samples.begin() + static_cast<std::ptrdiff_t>(k * len),
                       seg.samples.begin() + static_cast<std::ptrdiff_t>((k + 1) * len));
    out.push_back(std::move(sub));
  }
  return out;
}

}  // namespace rrdm
