#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rrdm/bfgs.hpp"
#include "rrdm/distribution.hpp"
#include "rrdm/features.hpp"
#include "rrdm/trajectory.hpp"

namespace rrdm {

struct EgoState {
  double t = 0.0;
  double pos = 0.0;
  double vel = 0.0;
  double acc = 0.0;  // last applied
};

enum class ResamplePolicy { kPerRun, kPerStep };

std::string_view to_string(ResamplePolicy p);
ResamplePolicy parse_resample_policy(std::string_view name);

struct PlannerConfig {
  double dt = 0.1;
  double v_min = 0.0;
  std::optional<double> v_max;  // unset: max recorded leader speed
  double d_s = 5.0;
  double a_min = -4.0;
  double a_max = 4.0;
  double penalty_weight = 1e4;
  int replan_every = 1;
  ResamplePolicy resample_W = ResamplePolicy::kPerRun;
  ResamplePolicy resample_N = ResamplePolicy::kPerStep;
  double acc_noise_std = 0.0;    // i.i.d. noise on the applied acceleration
  double audit_tolerance = 0.1;  // m and m/s on the planned sequence
  BfgsOptions solver{200, 2000, 1e-8, 1e-15};
  ConditionThresholds thresholds;

  void validate() const;
};

/// Constant-velocity extrapolation at k dt, k = 1..N/dt.
std::vector<LeaderPoint> predict_leader(double pos, double vel, double horizon_s, double dt);

struct NmpcSolution {
  double a_first = 0.0;               // clamped to the acceleration box
  std::vector<double> accelerations;  // unclamped optimizer output
  std::vector<KinematicPoint> states; // k = 1..M
  double objective = 0.0;
  double gap_violation = 0.0;    // max(d_s - d) over the plan, >= 0
  double speed_violation = 0.0;  // max distance outside [v_min, v_max], >= 0
};

/// Objective of the acceleration sequence `a` (size M) and its gradient.
double nmpc_objective(const EgoState& ego, std::span<const LeaderPoint> leader,
                      std::span<const double> weights, DrivingCondition condition,
                      const DriverConstants& constants, const NormalizationTable& table,
                      double v_max, const PlannerConfig& cfg, const Eigen::VectorXd& a,
                      Eigen::VectorXd* grad);

/// Double-integrator states after applying each acceleration for dt.
std::vector<KinematicPoint> integrate_plan(const EgoState& ego, std::span<const double> a, double dt);

/// Minimizes W . phi plus gap, speed and acceleration-box penalties over an
/// acceleration sequence of length N/dt. Throws kInfeasible when the plan
/// breaks the gap or speed limits by more than the audit tolerance.
NmpcSolution solve_nmpc_step(const EgoState& ego, std::span<const LeaderPoint> leader_pred,
                             std::span<const double> weights, DrivingCondition condition,
                             double horizon_s, const DriverConstants& constants,
                             const NormalizationTable& table, double v_max,
                             const PlannerConfig& cfg, std::span<const double> warm_start = {});

struct RolloutStep {
  double t = 0.0;
  double ego_pos = 0.0;
  double ego_vel = 0.0;
  double ego_acc = 0.0;
  double leader_pos = 0.0;
  double leader_vel = 0.0;
  DrivingCondition condition = DrivingCondition::kSteadyCarFollowing;
  double horizon = 0.0;
  std::uint64_t weights_hash = 0;

  double gap() const { return leader_pos - ego_pos; }
};

struct Rollout {
  std::string scenario_id;
  std::uint64_t seed = 0;
  double v_min = 0.0;
  double v_max = 0.0;
  double d_s = 5.0;
  std::vector<RolloutStep> steps;
};

std::uint64_t hash_weights(std::span<const double> w);

/// Closed-loop regeneration against the recorded leader of `log`, starting
/// from the log's first ego sample. The log's v_d replaces the model's when
/// positive.
Rollout rollout_scenario(const LeaderFollowerLog& log, const LearnedDriverModel& model,
                         const PlannerConfig& cfg, std::uint64_t seed);

struct ConstraintAudit {
  std::size_t violations = 0;
  double min_gap_margin = 0.0;  // min(gap - d_s)
  double max_speed_excess = 0.0;
};

/// Counts steps with gap < d_s - 0.1 or speed outside [v_min - 0.01, v_max + 0.01].
ConstraintAudit audit_rollout(const Rollout& r);

void write_rollout_csv(std::ostream& out, const Rollout& r);

}  // namespace rrdm
