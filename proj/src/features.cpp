#include "rrdm/features.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rrdm/error.hpp"

namespace rrdm {
namespace {

constexpr std::array<Feature, 4> kSteadyFeatures = {
    Feature::kAcceleration, Feature::kDesiredSpeed, Feature::kRelativeSpeed,
    Feature::kSteadyGap};
constexpr std::array<Feature, 3> kFreeFeatures = {Feature::kAcceleration,
                                                  Feature::kDesiredSpeed, Feature::kFreeGap};
constexpr std::array<Feature, 4> kUnsteadyFeatures = {
    Feature::kAcceleration, Feature::kDesiredSpeed, Feature::kRelativeSpeed,
    Feature::kSafeGap};

constexpr double kStoppedSpeed = 1e-3;
constexpr double kTauFloor = 0.5;

}  // namespace

std::string_view to_string(DrivingCondition c) {
  switch (c) {
    case DrivingCondition::kSteadyCarFollowing: return "steady";
    case DrivingCondition::kFreeMotion: return "free";
    case DrivingCondition::kUnsteadyCarFollowing: return "unsteady";
  }
  return "unknown";
}

std::string_view short_name(DrivingCondition c) { return to_string(c); }

DrivingCondition parse_condition(std::string_view name) {
  for (auto c : kAllConditions) {
    if (to_string(c) == name) return c;
  }
  fail(ErrorKind::kSchema, "unknown driving condition '" + std::string(name) + "'");
}

std::string_view to_string(Feature f) {
  switch (f) {
    case Feature::kAcceleration: return "a";
    case Feature::kDesiredSpeed: return "ds";
    case Feature::kRelativeSpeed: return "rs";
    case Feature::kSteadyGap: return "cd";
    case Feature::kSafeGap: return "sd";
    case Feature::kFreeGap: return "fd";
  }
  return "?";
}

std::span<const Feature> active_features(DrivingCondition c) {
  switch (c) {
    case DrivingCondition::kSteadyCarFollowing: return kSteadyFeatures;
    case DrivingCondition::kFreeMotion: return kFreeFeatures;
    case DrivingCondition::kUnsteadyCarFollowing: return kUnsteadyFeatures;
  }
  return {};
}

const std::vector<FeatureRange>& NormalizationTable::at(DrivingCondition c) const {
  auto it = ranges.find(c);
  if (it == ranges.end()) {
    fail(ErrorKind::kMissingCondition,
         "normalization table has no entry for condition '" + std::string(to_string(c)) + "'");
  }
  return it->second;
}

double thw(double gap, double ego_vel) {
  if (!(gap > 0.0)) fail(ErrorKind::kInvalidArgument, "time headway needs a positive gap");
  if (ego_vel <= kStoppedSpeed) return kThwSentinel;
  return std::min(gap / ego_vel, kThwSentinel);
}

double ttci(double ego_vel, double leader_vel, double gap) {
  if (!(gap > 0.0)) fail(ErrorKind::kInvalidArgument, "TTC inverse needs a positive gap");
  return (ego_vel - leader_vel) / gap;
}

DrivingCondition classify_from_averages(double mean_thw, double mean_ttci, double mean_gap,
                                        double mean_speed, const ConditionThresholds& th) {
  if (mean_thw < th.steady_thw_max && mean_ttci < th.steady_ttci_max) {
    return DrivingCondition::kSteadyCarFollowing;
  }
  if (mean_thw > th.free_thw_min && mean_ttci <= th.free_ttci_max &&
      mean_gap > th.free_gap_min && mean_speed > th.free_speed_min) {
    return DrivingCondition::kFreeMotion;
  }
  return DrivingCondition::kUnsteadyCarFollowing;
}

DrivingCondition classify_condition(const TrajectorySegment& seg, const ConditionThresholds& th) {
  if (seg.samples.empty()) fail(ErrorKind::kInvalidArgument, "empty segment");
  double sum_thw = 0.0, sum_ttci = 0.0, sum_gap = 0.0, sum_speed = 0.0;
  for (const auto& s : seg.samples) {
    const double gap = s.gap();
    sum_thw += thw(gap, s.ego_vel);
    sum_ttci += ttci(s.ego_vel, s.leader_vel, gap);
    sum_gap += gap;
    sum_speed += s.ego_vel;
  }
  const double n = static_cast<double>(seg.samples.size());
  return classify_from_averages(sum_thw / n, sum_ttci / n, sum_gap / n, sum_speed / n, th);
}

DrivingCondition classify_instant(double gap, double ego_vel, double leader_vel,
                                  const ConditionThresholds& th) {
  return classify_from_averages(thw(gap, ego_vel), ttci(ego_vel, leader_vel, gap), gap, ego_vel,
                                th);
}

std::array<double, kFeatureCount> raw_features(std::span<const KinematicPoint> ego,
                                               std::span<const LeaderPoint> leader,
                                               const DriverConstants& constants, double dt) {
  if (ego.size() != leader.size()) {
    fail(ErrorKind::kInvalidArgument, "ego and leader samples are not on the same grid (" +
                                          std::to_string(ego.size()) + " vs " +
                                          std::to_string(leader.size()) + ")");
  }
  std::array<double, kFeatureCount> f{};
  for (std::size_t k = 0; k < ego.size(); ++k) {
    const auto& e = ego[k];
    const double d = leader[k].pos - e.pos;
    const double dv_desired = constants.v_d - e.vel;
    const double dv_rel = leader[k].vel - e.vel;
    const double gap_err = d - (e.vel * constants.tau + constants.d_s);
    const double safe_err = d - constants.d_s;
    f[0] += e.acc * e.acc;
    f[1] += dv_desired * dv_desired;
    f[2] += dv_rel * dv_rel;
    f[3] += gap_err * gap_err;
    f[4] += safe_err * safe_err;
    f[5] += std::exp(-d);
  }
  for (auto& v : f) v *= dt;
  return f;
}

FeatureVector compute_features(std::span<const KinematicPoint> ego,
                               std::span<const LeaderPoint> leader, DrivingCondition condition,
                               const DriverConstants& constants, double dt) {
  if (ego.size() != leader.size()) {
    fail(ErrorKind::kInvalidArgument, "ego and leader samples are not on the same grid (" +
                                          std::to_string(ego.size()) + " vs " +
                                          std::to_string(leader.size()) + ")");
  }
  const auto active = active_features(condition);
  FeatureVector fv;
  fv.condition = condition;
  fv.values.assign(active.size(), 0.0);
  for (std::size_t k = 0; k < ego.size(); ++k) {
    const auto& e = ego[k];
    const double d = leader[k].pos - e.pos;
    for (std::size_t i = 0; i < active.size(); ++i) {
      double term = 0.0;
      switch (active[i]) {
        case Feature::kAcceleration: term = e.acc * e.acc; break;
        case Feature::kDesiredSpeed: term = (constants.v_d - e.vel) * (constants.v_d - e.vel); break;
        case Feature::kRelativeSpeed: term = (leader[k].vel - e.vel) * (leader[k].vel - e.vel); break;
        case Feature::kSteadyGap: {
          const double err = d - (e.vel * constants.tau + constants.d_s);
          term = err * err;
          break;
        }
        case Feature::kSafeGap: term = (d - constants.d_s) * (d - constants.d_s); break;
        case Feature::kFreeGap: term = std::exp(-d); break;
      }
      fv.values[i] += term;
    }
  }
  for (auto& v : fv.values) v *= dt;
  return fv;
}

std::vector<KinematicPoint> ego_points(std::span<const LogSample> samples) {
  std::vector<KinematicPoint> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({s.ego_pos, s.ego_vel, s.ego_acc});
  return out;
}

std::vector<LeaderPoint> leader_points(std::span<const LogSample> samples) {
  std::vector<LeaderPoint> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({s.leader_pos, s.leader_vel});
  return out;
}

NormalizationTable fit_normalization(
    const std::map<DrivingCondition, std::vector<FeatureVector>>& groups) {
  NormalizationTable table;
  for (const auto& [condition, vectors] : groups) {
    if (vectors.empty()) {
      fail(ErrorKind::kInvalidArgument, "no training feature vectors for condition '" +
                                            std::string(to_string(condition)) + "'");
    }
    const std::size_t dim = active_features(condition).size();
    std::vector<FeatureRange> ranges(dim, {std::numeric_limits<double>::infinity(),
                                           -std::numeric_limits<double>::infinity()});
    for (const auto& fv : vectors) {
      if (fv.condition != condition || fv.values.size() != dim) {
        fail(ErrorKind::kInvalidArgument, "feature vector does not match its condition group");
      }
      for (std::size_t i = 0; i < dim; ++i) {
        ranges[i].min = std::min(ranges[i].min, fv.values[i]);
        ranges[i].max = std::max(ranges[i].max, fv.values[i]);
      }
    }
    for (auto& r : ranges) {
      if (r.max == r.min) r.max = r.min + 1.0;
    }
    table.ranges[condition] = std::move(ranges);
  }
  return table;
}

FeatureVector normalize(const FeatureVector& fv, const NormalizationTable& table) {
  const auto& ranges = table.at(fv.condition);
  if (ranges.size() != fv.values.size()) {
    fail(ErrorKind::kInvalidArgument, "feature vector dimension does not match the table");
  }
  FeatureVector out = fv;
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    const double v = (fv.values[i] - ranges[i].min) / (ranges[i].max - ranges[i].min);
    out.values[i] = std::clamp(v, 0.0, 1.0);
  }
  return out;
}

double normalized_cost(std::span<const double> weights, const FeatureVector& raw,
                       const NormalizationTable& table) {
  const auto& ranges = table.at(raw.condition);
  if (weights.size() != raw.values.size() || ranges.size() != raw.values.size()) {
    fail(ErrorKind::kInvalidArgument, "weight dimension does not match the condition");
  }
  double cost = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    cost += weights[i] * (raw.values[i] - ranges[i].min) / (ranges[i].max - ranges[i].min);
  }
  return cost;
}

double estimate_tau_from_thw(std::span<const double> thw_samples) {
  if (thw_samples.empty()) {
    fail(ErrorKind::kInvalidArgument,
         "no steady car-following samples to estimate tau; supply tau explicitly");
  }
  return std::max(kTauFloor, *std::min_element(thw_samples.begin(), thw_samples.end()));
}

double estimate_tau(std::span<const TrajectorySegment> steady_segments) {
  std::vector<double> samples;
  for (const auto& seg : steady_segments) {
    for (const auto& s : seg.samples) samples.push_back(thw(s.gap(), s.ego_vel));
  }
  return estimate_tau_from_thw(samples);
}

}  // namespace rrdm
