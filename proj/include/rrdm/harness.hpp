#pragma once

#include <cstdint>
#include <map>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "rrdm/distribution.hpp"
#include "rrdm/features.hpp"
#include "rrdm/irl.hpp"
#include "rrdm/planner.hpp"
#include "rrdm/trajectory.hpp"

namespace rrdm {

/// Child seed of `master` along `path`; every random stream is derived this way.
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path);

enum class ScenarioKind { kCruising, kStopAndGo, kTransient };

std::string_view to_string(ScenarioKind kind);

struct SpeedKnot {
  double t = 0.0;
  double v = 0.0;
};

/// Leader motion described by a piecewise-linear speed profile.
struct LeaderScenario {
  std::string id;
  ScenarioKind kind = ScenarioKind::kCruising;
  double duration = 120.0;
  std::vector<SpeedKnot> knots;  // t ascending, first at 0, last at duration
  double v_d = 25.0;             // road speed limit handed to the driver
  double initial_gap = 30.0;     // leader ahead of the ego at t = 0
  double initial_speed = -1.0;   // ego speed at t = 0; negative: leader speed

  double speed(double t) const;
  /// Distance travelled since t = 0 (exact integral of the profile).
  double distance(double t) const;
};

/// Nine scenarios: cruising at 15/20/25 m/s, stop-and-go 0-10 m/s with
/// 20/30/40 s periods, and 10 -> 25 -> 12 m/s transients at three ramp rates.
std::vector<LeaderScenario> builtin_scenarios();

/// How a ground-truth driver turns its cost into motion.
enum class DemoMode {
  kBlockQuintic,     // plans a quintic window of N* seconds and executes all of it
  kRecedingHorizon,  // the closed-loop planner with a degenerate model
};

struct GroundTruthDriver {
  std::map<DrivingCondition, std::vector<double>> weights;
  double horizon = 3.0;
  double noise_std = 0.0;  // i.i.d. acceleration noise, m/s^2
  DriverConstants constants{1.2, 5.0, 0.0};
  NormalizationTable table;  // cost scales the weights refer to
  DemoMode mode = DemoMode::kBlockQuintic;
  double segment_length = 12.0;
  ConditionThresholds thresholds;

  void validate() const;
};

/// A ready-made driver whose cost scales roughly match the built-in scenarios.
GroundTruthDriver reference_driver(double horizon);

/// Recorded leader samples of a scenario at `rate_hz` (ego columns zero).
std::vector<LogSample> leader_track(const LeaderScenario& scenario, double rate_hz = 10.0);

/// One log per scenario x repeat, scenario-major. Repeat r of scenario s is
/// seeded with derive_seed(seed, {s, r}).
std::vector<LeaderFollowerLog> generate_synthetic_demos(const GroundTruthDriver& driver,
                                                        std::span<const LeaderScenario> scenarios,
                                                        int repeats, std::uint64_t seed,
                                                        const PlannerConfig& planner = {});

struct RmseResult {
  double speed = 0.0;
  double acc = 0.0;
};

struct TrajectoryPoint {
  double t = 0.0;
  double vel = 0.0;
  double acc = 0.0;
};

RmseResult rmse(std::span<const TrajectoryPoint> observed, std::span<const TrajectoryPoint> predicted);

std::vector<TrajectoryPoint> trajectory_of(const LeaderFollowerLog& log);
std::vector<TrajectoryPoint> trajectory_of(const Rollout& rollout);

/// Pointwise mean of equally long trajectories.
std::vector<TrajectoryPoint> mean_trajectory(std::span<const std::vector<TrajectoryPoint>> runs);

struct RecoveryConfig {
  LearnerConfig learner;
  PlannerConfig planner;
  int repeats = 2;
  double test_fraction = 0.5;
  int samples = 50;                       // rollouts per held-out log; 0 skips replay
  std::vector<std::string> scenario_ids;  // empty: all built-in scenarios
  bool supply_tau = true;                 // learner uses the driver's tau
  bool per_condition_horizons = false;
};

struct ConditionRecovery {
  std::size_t pool_size = 0;
  double cosine = 0.0;
  std::vector<double> mean_learned;
  std::vector<double> reference;  // ground truth expressed in the learner's scales
};

struct RecoveryReport {
  double true_horizon = 0.0;
  std::size_t segments = 0;
  double horizon_recovery = 0.0;
  double converged_fraction = 0.0;
  double median_iterations = 0.0;
  bool trace_decreasing = true;   // grad norm at 500 < at 10 wherever still running at 500
  std::size_t traces_checked = 0;
  std::map<double, double> pmf;
  std::map<DrivingCondition, ConditionRecovery> conditions;
  RmseResult heldout_rmse;
  std::size_t rollouts = 0;
  std::size_t rollout_failures = 0;  // rollouts aborted by the planner
  std::string first_failure;
  std::size_t constraint_violations = 0;
  double min_gap_margin = 0.0;  // min over rollouts of gap - d_s
  LearningOutcome learning;
  LearnedDriverModel model;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Per scenario, round(fraction * count) items go to test (at least one stays
/// in train) after a shuffle seeded with derive_seed(seed, {scenario order}).
SplitIndices split_indices(std::span<const std::string> scenario_ids, double test_fraction,
                           std::uint64_t seed);

/// Splits each scenario's repeats into train and test logs by a seeded shuffle.
void split_train_test(std::span<const LeaderFollowerLog> logs, double test_fraction,
                      std::uint64_t seed, std::vector<LeaderFollowerLog>& train,
                      std::vector<LeaderFollowerLog>& test);

/// Generates demos, learns, fits the model and replays held-out logs.
RecoveryReport run_recovery_experiment(const GroundTruthDriver& driver,
                                       const RecoveryConfig& config, std::uint64_t seed);

/// Ground-truth weights re-expressed in another table's feature scales.
std::vector<double> rescale_weights(std::span<const double> weights, DrivingCondition condition,
                                    const NormalizationTable& from, const NormalizationTable& to);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

}  // namespace rrdm
