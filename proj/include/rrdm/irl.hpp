#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rrdm/features.hpp"
#include "rrdm/trajectory.hpp"

namespace rrdm {

struct InnerOptimizerSettings {
  int max_iterations = 100;
  int max_evaluations = 2000;
  double gradient_tolerance = 1e-10;
  double fd_step = 1e-6;
};

struct LearnerConfig {
  double learning_rate = 0.1;
  double grad_tol = 1e-3;
  int max_iters = 1000;
  std::vector<double> horizons{2.0, 3.0, 4.0};
  double segment_length = 12.0;
  InnerOptimizerSettings inner;
  ConditionThresholds thresholds;
  double d_s = 5.0;
  std::optional<double> tau;  // estimated from Steady segments when unset
  unsigned threads = 0;       // 0: hardware concurrency

  void validate() const;
};

struct SubsegmentPlan {
  QuinticCoeffs coeffs;
  double objective = 0.0;
  double initial_objective = 0.0;
  bool converged = true;
};

/// Most likely quintic for one window: (y5, y4, y3) from the initial state,
/// (y2, y1, y0) minimizing W . normalized features from a zero guess.
SubsegmentPlan optimize_subsegment(const KinematicPoint& init, std::span<const LeaderPoint> leader,
                                   std::span<const double> weights, DrivingCondition condition,
                                   const DriverConstants& constants, const NormalizationTable& table,
                                   double dt, const InnerOptimizerSettings& settings = {});

/// Samples a quintic on the grid t_k = k dt, k = 0..count-1.
std::vector<KinematicPoint> sample_quintic(const QuinticCoeffs& c, std::size_t count, double dt);

/// Mean normalized features of the recorded windows of length N.
FeatureVector observed_features(const TrajectorySegment& seg, double horizon_s,
                                DrivingCondition condition, const DriverConstants& constants,
                                const NormalizationTable& table);

/// Mean normalized features of the optimized windows of length N.
FeatureVector expected_features(const TrajectorySegment& seg, std::span<const double> weights,
                                double horizon_s, DrivingCondition condition,
                                const DriverConstants& constants, const NormalizationTable& table,
                                const InnerOptimizerSettings& settings = {});

struct WeightLearnResult {
  std::vector<double> weights;
  double final_grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  bool hit_bound = false;           // some weight was clamped at zero
  std::vector<double> grad_trace;   // gradient norm per iteration, starting at 1
};

WeightLearnResult learn_segment_weights(const TrajectorySegment& seg, double horizon_s,
                                        DrivingCondition condition,
                                        const DriverConstants& constants,
                                        const NormalizationTable& table,
                                        const LearnerConfig& config);

struct SegmentLearnResult {
  std::string segment_id;
  DrivingCondition condition = DrivingCondition::kSteadyCarFollowing;
  double best_horizon = 0.0;
  std::vector<double> weights;
  double final_grad_norm = 0.0;
  std::map<double, WeightLearnResult> per_horizon;
};

/// Learns weights for every candidate horizon and keeps the one with the
/// smallest final gradient norm; ties go to the smaller horizon.
SegmentLearnResult select_horizon(const TrajectorySegment& seg, DrivingCondition condition,
                                  const DriverConstants& constants,
                                  const NormalizationTable& table, const LearnerConfig& config);

/// Picks the argmin of final gradient norms; ties go to the smaller horizon.
double pick_best_horizon(const std::map<double, WeightLearnResult>& per_horizon);

struct LearningOutcome {
  DriverConstants constants;  // v_d holds the median over training logs
  NormalizationTable table;
  std::vector<SegmentLearnResult> segments;
  std::map<DrivingCondition, std::vector<std::vector<double>>> pools;
  std::map<double, std::size_t> horizon_counts;
  std::map<DrivingCondition, std::map<double, std::size_t>> condition_horizon_counts;
};

/// Classifies, fits tau and the normalization table on the training set,
/// then learns every segment.
LearningOutcome learn_all(std::span<const LeaderFollowerLog> demos, const LearnerConfig& config);

std::string segment_id(const TrajectorySegment& seg, std::size_t index);

}  // namespace rrdm
