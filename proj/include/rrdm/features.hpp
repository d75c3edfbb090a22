#pragma once

#include <array>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rrdm/trajectory.hpp"

namespace rrdm {

enum class DrivingCondition {
  kSteadyCarFollowing = 0,
  kFreeMotion = 1,
  kUnsteadyCarFollowing = 2,
};

inline constexpr std::array<DrivingCondition, 3> kAllConditions = {
    DrivingCondition::kSteadyCarFollowing, DrivingCondition::kFreeMotion,
    DrivingCondition::kUnsteadyCarFollowing};

enum class Feature {
  kAcceleration = 0,   // integral of r''^2
  kDesiredSpeed = 1,   // integral of (v_d - r')^2
  kRelativeSpeed = 2,  // integral of (v_p - r')^2
  kSteadyGap = 3,      // integral of (d - d_c)^2, d_c = r' tau + d_s
  kSafeGap = 4,        // integral of (d - d_s)^2
  kFreeGap = 5,        // integral of exp(-d)
};

inline constexpr std::size_t kFeatureCount = 6;

std::string_view to_string(DrivingCondition c);
std::string_view short_name(DrivingCondition c);
DrivingCondition parse_condition(std::string_view name);
std::string_view to_string(Feature f);

/// Ordered active feature set of a condition.
std::span<const Feature> active_features(DrivingCondition c);

struct FeatureVector {
  DrivingCondition condition = DrivingCondition::kSteadyCarFollowing;
  std::vector<double> values;  // ordered as active_features(condition)
};

struct FeatureRange {
  double min = 0.0;
  double max = 1.0;
};

struct NormalizationTable {
  std::map<DrivingCondition, std::vector<FeatureRange>> ranges;

  bool covers(DrivingCondition c) const { return ranges.count(c) != 0; }
  const std::vector<FeatureRange>& at(DrivingCondition c) const;
};

struct DriverConstants {
  double tau = 1.0;  // minimum observed time headway, s
  double d_s = 5.0;  // standstill distance, m
  double v_d = 0.0;  // desired speed, m/s
};

struct ConditionThresholds {
  double steady_thw_max = 6.0;
  double steady_ttci_max = 0.05;
  double free_thw_min = 6.0;
  double free_ttci_max = 0.0;
  double free_gap_min = 35.0;
  double free_speed_min = 5.0;
};

inline constexpr double kThwSentinel = 1e6;

/// Time headway gap / v; kThwSentinel when the ego is (nearly) stopped.
double thw(double gap, double ego_vel);

/// Time-to-collision inverse (v_ego - v_leader) / gap; positive when closing.
double ttci(double ego_vel, double leader_vel, double gap);

DrivingCondition classify_from_averages(double mean_thw, double mean_ttci, double mean_gap,
                                        double mean_speed, const ConditionThresholds& th = {});

/// Segment-average classification; Steady is tested first, then FreeMotion.
DrivingCondition classify_condition(const TrajectorySegment& seg,
                                    const ConditionThresholds& th = {});

/// Single-sample classification used at replanning time.
DrivingCondition classify_instant(double gap, double ego_vel, double leader_vel,
                                  const ConditionThresholds& th = {});

struct LeaderPoint {
  double pos = 0.0;
  double vel = 0.0;
};

/// Raw values of all six features over a window (left Riemann sums).
std::array<double, kFeatureCount> raw_features(std::span<const KinematicPoint> ego,
                                               std::span<const LeaderPoint> leader,
                                               const DriverConstants& constants, double dt);

/// Active raw features of `condition` over a window.
FeatureVector compute_features(std::span<const KinematicPoint> ego,
                               std::span<const LeaderPoint> leader, DrivingCondition condition,
                               const DriverConstants& constants, double dt);

std::vector<KinematicPoint> ego_points(std::span<const LogSample> samples);
std::vector<LeaderPoint> leader_points(std::span<const LogSample> samples);

/// Per-condition min/max over the supplied vectors. A degenerate feature
/// (max == min) gets max = min + 1.
NormalizationTable fit_normalization(
    const std::map<DrivingCondition, std::vector<FeatureVector>>& groups);

/// (v - min) / (max - min), clamped to [0, 1].
FeatureVector normalize(const FeatureVector& fv, const NormalizationTable& table);

/// The unclamped affine map used inside cost functions.
double normalized_cost(std::span<const double> weights, const FeatureVector& raw,
                       const NormalizationTable& table);

/// Minimum per-sample THW over Steady segments, floored at 0.5 s.
double estimate_tau(std::span<const TrajectorySegment> steady_segments);
double estimate_tau_from_thw(std::span<const double> thw_samples);

}  // namespace rrdm
