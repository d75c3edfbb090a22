#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace rrdm {

/// One row of a leader-follower recording, SI units.
struct LogSample {
  double t = 0.0;
  double leader_pos = 0.0;
  double leader_vel = 0.0;
  double ego_pos = 0.0;
  double ego_vel = 0.0;
  double ego_acc = 0.0;

  double gap() const { return leader_pos - ego_pos; }
};

struct ScenarioMeta {
  std::string scenario_id;
  double v_d = 0.0;
  double rate_hz = 10.0;
};

/// A validated recording sampled at a constant rate.
struct LeaderFollowerLog {
  std::string scenario_id;
  double rate_hz = 10.0;
  double v_d = 0.0;  // desired / limit speed
  std::vector<LogSample> samples;

  double dt() const { return 1.0 / rate_hz; }
  double duration() const {
    return samples.empty() ? 0.0 : static_cast<double>(samples.size() - 1) / rate_hz;
  }
};

/// Parses the CSV log format. `ego_acc` is back-filled by finite differences
/// of `ego_vel` when the column is absent. Throws Error(kParse) with a line
/// number for malformed rows and Error(kValidation) for invariant violations.
LeaderFollowerLog load_log(std::istream& csv, double rate_hz, double v_d,
                           std::string scenario_id = {});

/// Loads `<csv>` plus its JSON sidecar (scenario_id, v_d, rate_hz).
LeaderFollowerLog load_log_file(const std::filesystem::path& csv,
                                const std::filesystem::path& sidecar);

ScenarioMeta load_sidecar(const std::filesystem::path& sidecar);
void write_sidecar(const std::filesystem::path& sidecar, const ScenarioMeta& meta);

/// Writes the CSV log format with round-trip exact reals, ego_acc included.
void write_log_csv(std::ostream& out, const LeaderFollowerLog& log);
void save_log_files(const std::filesystem::path& csv, const std::filesystem::path& sidecar,
                    const LeaderFollowerLog& log);

/// Checks timestamps, ordering of leader and ego, and non-negative ego speed.
void validate_log(const LeaderFollowerLog& log);

/// Shortest round-trip decimal text of a double.
std::string format_real(double value);

/// A fixed-length window of a log; the unit of learning.
struct TrajectorySegment {
  std::string parent;
  std::size_t start_index = 0;
  double duration_s = 0.0;
  double rate_hz = 10.0;
  double v_d = 0.0;
  std::vector<LogSample> samples;

  double dt() const { return 1.0 / rate_hz; }
  double gap(std::size_t k) const { return samples[k].gap(); }
};

/// Consecutive non-overlapping segments of `horizon_s` seconds; a trailing
/// remainder is discarded.
std::vector<TrajectorySegment> segment_log(const LeaderFollowerLog& log, double horizon_s);

/// Number of samples spanning `duration_s` at `rate_hz`; throws if the duration
/// is not a whole number of sampling steps.
std::size_t steps_for(double duration_s, double rate_hz);

struct KinematicPoint {
  double pos = 0.0;
  double vel = 0.0;
  double acc = 0.0;
};

/// r(t) = y0 t^5 + y1 t^4 + y2 t^3 + y3 t^2 + y4 t + y5; `y[i]` holds y_i.
struct QuinticCoeffs {
  std::array<double, 6> y{};
};

KinematicPoint eval_quintic(const QuinticCoeffs& c, double t);

/// Fixes (y5, y4, y3) so that r(0), r'(0), r''(0) reproduce the given state;
/// the free coefficients (y2, y1, y0) are zero.
QuinticCoeffs coeffs_from_initial_state(double pos0, double vel0, double acc0);

/// One planning window inside a segment.
struct Subsegment {
  std::size_t offset = 0;  // first sample index within the segment
  std::vector<LogSample> samples;

  KinematicPoint initial_state() const {
    return {samples.front().ego_pos, samples.front().ego_vel, samples.front().ego_acc};
  }
};

/// Splits a segment into floor(H / N) windows of N seconds.
std::vector<Subsegment> partition_segment(const TrajectorySegment& seg, double horizon_s);

}  // namespace rrdm
