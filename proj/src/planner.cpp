#include "rrdm/planner.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <ostream>

#include "rrdm/error.hpp"

namespace rrdm {
namespace {

// exp(-d) is evaluated with d floored here; deeper overlaps are left to the gap penalty.
constexpr double kMinExpGap = -30.0;

std::size_t horizon_steps(double horizon_s, double dt) {
  const double m = horizon_s / dt;
  const auto steps = static_cast<std::size_t>(std::llround(m));
  if (steps == 0 || std::abs(m - static_cast<double>(steps)) > 1e-9) {
    fail(ErrorKind::kInvalidArgument,
         "planning horizon must be a positive multiple of the control step");
  }
  return steps;
}

}  // namespace

std::string_view to_string(ResamplePolicy p) {
  return p == ResamplePolicy::kPerRun ? "per_run" : "per_step";
}

ResamplePolicy parse_resample_policy(std::string_view name) {
  if (name == "per_run") return ResamplePolicy::kPerRun;
  if (name == "per_step") return ResamplePolicy::kPerStep;
  fail(ErrorKind::kInvalidArgument, "resample policy must be per_run or per_step");
}

void PlannerConfig::validate() const {
  if (!(dt > 0.0)) fail(ErrorKind::kInvalidArgument, "control step must be positive");
  if (v_max && !(v_min < *v_max)) fail(ErrorKind::kInvalidArgument, "v_min must be below v_max");
  if (!(a_min < a_max)) fail(ErrorKind::kInvalidArgument, "a_min must be below a_max");
  if (!(d_s >= 0.0)) fail(ErrorKind::kInvalidArgument, "d_s must be non-negative");
  if (!(penalty_weight > 0.0)) fail(ErrorKind::kInvalidArgument, "penalty weight must be positive");
  if (replan_every < 1) fail(ErrorKind::kInvalidArgument, "replan_every must be >= 1");
}

std::vector<LeaderPoint> predict_leader(double pos, double vel, double horizon_s, double dt) {
  if (!(horizon_s > 0.0)) fail(ErrorKind::kInvalidArgument, "prediction horizon must be positive");
  const std::size_t m = horizon_steps(horizon_s, dt);
  std::vector<LeaderPoint> out(m);
  for (std::size_t k = 0; k < m; ++k) {
    out[k] = {pos + vel * static_cast<double>(k + 1) * dt, vel};
  }
  return out;
}

std::vector<KinematicPoint> integrate_plan(const EgoState& ego, std::span<const double> a, double dt) {
  std::vector<KinematicPoint> states(a.size());
  double p = ego.pos, v = ego.vel;
  for (std::size_t k = 0; k < a.size(); ++k) {
    p += v * dt + 0.5 * a[k] * dt * dt;
    v += a[k] * dt;
    states[k] = {p, v, a[k]};
  }
  return states;
}

double nmpc_objective(const EgoState& ego, std::span<const LeaderPoint> leader,
                      std::span<const double> weights, DrivingCondition condition,
                      const DriverConstants& constants, const NormalizationTable& table,
                      double v_max, const PlannerConfig& cfg, const Eigen::VectorXd& a,
                      Eigen::VectorXd* grad) {
  const auto m = static_cast<std::size_t>(a.size());
  const auto active = active_features(condition);
  const auto& ranges = table.at(condition);
  if (weights.size() != active.size()) {
    fail(ErrorKind::kInvalidArgument, "weight dimension does not match the condition");
  }
  const double dt = cfg.dt;
  std::vector<double> scale(active.size());
  double offset = 0.0;
  for (std::size_t i = 0; i < active.size(); ++i) {
    scale[i] = weights[i] / (ranges[i].max - ranges[i].min);
    offset -= scale[i] * ranges[i].min;
  }

  double cost = offset;
  std::vector<double> g_pos(m, 0.0), g_vel(m, 0.0), g_acc(m, 0.0);
  double p = ego.pos, v = ego.vel;
  for (std::size_t k = 0; k < m; ++k) {
    const double ak = a[static_cast<Eigen::Index>(k)];
    p += v * dt + 0.5 * ak * dt * dt;
    v += ak * dt;
    const double d = leader[k].pos - p;
    for (std::size_t i = 0; i < active.size(); ++i) {
      const double s = scale[i] * dt;
      switch (active[i]) {
        case Feature::kAcceleration:
          cost += s * ak * ak;
          g_acc[k] += s * 2.0 * ak;
          break;
        case Feature::kDesiredSpeed: {
          const double e = constants.v_d - v;
          cost += s * e * e;
          g_vel[k] -= s * 2.0 * e;
          break;
        }
        case Feature::kRelativeSpeed: {
          const double e = leader[k].vel - v;
          cost += s * e * e;
          g_vel[k] -= s * 2.0 * e;
          break;
        }
        case Feature::kSteadyGap: {
          const double e = d - (v * constants.tau + constants.d_s);
          cost += s * e * e;
          g_pos[k] -= s * 2.0 * e;
          g_vel[k] -= s * 2.0 * e * constants.tau;
          break;
        }
        case Feature::kSafeGap: {
          const double e = d - constants.d_s;
          cost += s * e * e;
          g_pos[k] -= s * 2.0 * e;
          break;
        }
        case Feature::kFreeGap: {
          const double x = std::max(d, kMinExpGap);
          const double e = std::exp(-x);
          cost += s * e;
          if (d > kMinExpGap) g_pos[k] += s * e;
          break;
        }
      }
    }
    const double mu = cfg.penalty_weight;
    if (ak < cfg.a_min) {
      const double e = cfg.a_min - ak;
      cost += mu * e * e;
      g_acc[k] -= mu * 2.0 * e;
    } else if (ak > cfg.a_max) {
      const double e = ak - cfg.a_max;
      cost += mu * e * e;
      g_acc[k] += mu * 2.0 * e;
    }
    if (d < cfg.d_s) {
      const double e = cfg.d_s - d;
      cost += mu * e * e;
      g_pos[k] += mu * 2.0 * e;
    }
    if (v < cfg.v_min) {
      const double e = cfg.v_min - v;
      cost += mu * e * e;
      g_vel[k] -= mu * 2.0 * e;
    } else if (v > v_max) {
      const double e = v - v_max;
      cost += mu * e * e;
      g_vel[k] += mu * 2.0 * e;
    }
  }

  if (grad) {
    grad->resize(a.size());
    // a_j moves vel_k by dt and pos_k by dt^2 (k - j - 1/2) for every k > j (1-based k).
    double sum_v = 0.0, sum_p = 0.0, sum_pk = 0.0;
    for (std::size_t jj = m; jj-- > 0;) {
      const double k1 = static_cast<double>(jj + 1);
      sum_v += g_vel[jj];
      sum_p += g_pos[jj];
      sum_pk += g_pos[jj] * k1;
      const double j = static_cast<double>(jj);
      (*grad)[static_cast<Eigen::Index>(jj)] =
          g_acc[jj] + dt * sum_v + dt * dt * (sum_pk - (j + 0.5) * sum_p);
    }
  }
  return cost;
}

NmpcSolution solve_nmpc_step(const EgoState& ego, std::span<const LeaderPoint> leader_pred,
                             std::span<const double> weights, DrivingCondition condition,
                             double horizon_s, const DriverConstants& constants,
                             const NormalizationTable& table, double v_max,
                             const PlannerConfig& cfg, std::span<const double> warm_start) {
  const std::size_t m = horizon_steps(horizon_s, cfg.dt);
  if (leader_pred.size() < m) {
    fail(ErrorKind::kInvalidArgument, "leader prediction is shorter than the horizon");
  }
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      fail(ErrorKind::kInvalidArgument, "planner weights must be finite and non-negative");
    }
  }
  const auto leader = leader_pred.first(m);
  Eigen::VectorXd warm = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));
  for (std::size_t k = 0; k < m && k < warm_start.size(); ++k) {
    warm[static_cast<Eigen::Index>(k)] = warm_start[k];
  }

  // Warm start first; on a failed audit retry cold, then with a stiffer penalty.
  struct Attempt {
    bool cold;
    double penalty_scale;
  };
  const Attempt attempts[] = {{false, 1.0}, {true, 1.0}, {true, 100.0}};
  NmpcSolution sol;
  for (const auto& attempt : attempts) {
    if (attempt.cold && warm_start.empty() && attempt.penalty_scale == 1.0) continue;
    PlannerConfig c = cfg;
    c.penalty_weight *= attempt.penalty_scale;
    auto f = [&](const Eigen::VectorXd& a, Eigen::VectorXd* g) {
      return nmpc_objective(ego, leader, weights, condition, constants, table, v_max, c, a, g);
    };
    const Eigen::VectorXd x0 =
        attempt.cold ? Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m)) : warm;
    const auto res = minimize_bfgs(f, x0, c.solver);

    sol = NmpcSolution{};
    sol.objective = res.value;
    sol.accelerations.assign(res.x.data(), res.x.data() + res.x.size());
    sol.states = integrate_plan(ego, sol.accelerations, cfg.dt);
    for (std::size_t k = 0; k < m; ++k) {
      const auto& s = sol.states[k];
      sol.gap_violation = std::max(sol.gap_violation, cfg.d_s - (leader[k].pos - s.pos));
      sol.speed_violation = std::max({sol.speed_violation, cfg.v_min - s.vel, s.vel - v_max});
    }
    if (sol.gap_violation <= cfg.audit_tolerance && sol.speed_violation <= cfg.audit_tolerance) break;
  }
  if (sol.gap_violation > cfg.audit_tolerance || sol.speed_violation > cfg.audit_tolerance) {
    fail(ErrorKind::kInfeasible, "planned sequence violates constraints: gap short by " +
                                     std::to_string(sol.gap_violation) + " m, speed outside by " +
                                     std::to_string(sol.speed_violation) + " m/s");
  }
  sol.gap_violation = std::max(0.0, sol.gap_violation);
  sol.speed_violation = std::max(0.0, sol.speed_violation);
  sol.a_first = std::clamp(sol.accelerations.front(), cfg.a_min, cfg.a_max);
  return sol;
}

std::uint64_t hash_weights(std::span<const double> w) {
  std::uint64_t h = 14695981039346656037ull;  // FNV-1a
  for (double v : w) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof(double));
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 1099511628211ull;
    }
  }
  return h;
}

Rollout rollout_scenario(const LeaderFollowerLog& log, const LearnedDriverModel& model,
                         const PlannerConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (log.samples.size() < 2) fail(ErrorKind::kInvalidArgument, "leader log is too short");
  if (std::abs(log.dt() - cfg.dt) > 1e-12) {
    fail(ErrorKind::kInvalidArgument, "leader log rate does not match the control step");
  }
  model.horizons.validate();
  for (const auto& [c, h] : model.condition_horizons) h.validate();

  Rollout out;
  out.scenario_id = log.scenario_id;
  out.seed = seed;
  out.d_s = cfg.d_s;
  out.v_min = cfg.v_min;
  double v_max = 0.0;
  for (const auto& s : log.samples) v_max = std::max(v_max, s.leader_vel);
  out.v_max = cfg.v_max.value_or(v_max);
  if (!(out.v_max > cfg.v_min)) fail(ErrorKind::kInvalidArgument, "v_max must exceed v_min");

  DriverConstants constants = model.constants;
  constants.d_s = cfg.d_s;
  if (log.v_d > 0.0) constants.v_d = log.v_d;

  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::map<DrivingCondition, std::vector<double>> run_weights;
  std::optional<double> run_horizon;
  auto weights_for = [&](DrivingCondition c) -> std::vector<double> {
    if (cfg.resample_W == ResamplePolicy::kPerStep) return sample_weights(model.copula(c), rng);
    auto it = run_weights.find(c);
    if (it == run_weights.end()) it = run_weights.emplace(c, sample_weights(model.copula(c), rng)).first;
    return it->second;
  };
  auto horizon = [&](DrivingCondition c) {
    const auto& pn = model.horizons_for(c);
    if (cfg.resample_N == ResamplePolicy::kPerStep) return sample_horizon(pn, rng);
    if (!run_horizon) run_horizon = sample_horizon(pn, rng);
    return *run_horizon;
  };

  const auto& first = log.samples.front();
  EgoState ego{first.t, first.ego_pos, std::clamp(first.ego_vel, cfg.v_min, out.v_max), 0.0};
  std::vector<double> plan;
  std::size_t plan_index = 0;
  int since_replan = cfg.replan_every;
  DrivingCondition condition = DrivingCondition::kSteadyCarFollowing;
  double n_used = 0.0;
  std::uint64_t w_hash = 0;

  const std::size_t steps = log.samples.size();
  out.steps.reserve(steps);
  for (std::size_t i = 0; i + 1 < steps; ++i) {
    const auto& lead = log.samples[i];
    const double gap = lead.leader_pos - ego.pos;
    if (!(gap > 0.0)) {
      fail(ErrorKind::kInfeasible, "collision with the leader at step " + std::to_string(i));
    }
    double a = 0.0;
    if (since_replan >= cfg.replan_every || plan_index >= plan.size()) {
      condition = classify_instant(gap, ego.vel, lead.leader_vel, cfg.thresholds);
      const auto w = weights_for(condition);
      n_used = horizon(condition);
      w_hash = hash_weights(w);
      std::vector<double> warm;
      if (plan_index < plan.size()) warm.assign(plan.begin() + static_cast<long>(plan_index), plan.end());
      if (!warm.empty()) warm.resize(horizon_steps(n_used, cfg.dt), warm.back());
      const auto pred = predict_leader(lead.leader_pos, lead.leader_vel, n_used, cfg.dt);
      try {
        const auto sol = solve_nmpc_step(ego, pred, w, condition, n_used, constants,
                                         model.normalization, out.v_max, cfg, warm);
        plan = sol.accelerations;
      } catch (const Error& e) {
        fail(e.kind(), "step " + std::to_string(i) + " (t=" + format_real(ego.t) + "): " + e.what());
      }
      plan_index = 0;
      since_replan = 0;
    }
    a = plan[plan_index];
    if (cfg.acc_noise_std > 0.0) a += cfg.acc_noise_std * noise(rng);
    a = std::clamp(a, cfg.a_min, cfg.a_max);
    // Keep the next speed inside the box.
    a = std::clamp(a, (cfg.v_min - ego.vel) / cfg.dt, (out.v_max - ego.vel) / cfg.dt);
    ++plan_index;
    ++since_replan;

    out.steps.push_back({ego.t, ego.pos, ego.vel, a, lead.leader_pos, lead.leader_vel, condition,
                         n_used, w_hash});
    ego.pos += ego.vel * cfg.dt + 0.5 * a * cfg.dt * cfg.dt;
    ego.vel += a * cfg.dt;
    ego.acc = a;
    ego.t = log.samples[i + 1].t;
  }
  const auto& last = log.samples.back();
  out.steps.push_back({ego.t, ego.pos, ego.vel, ego.acc, last.leader_pos, last.leader_vel, condition,
                       n_used, w_hash});
  return out;
}

ConstraintAudit audit_rollout(const Rollout& r) {
  ConstraintAudit audit;
  audit.min_gap_margin = std::numeric_limits<double>::infinity();
  for (const auto& s : r.steps) {
    const double margin = s.gap() - r.d_s;
    const double excess = std::max(r.v_min - s.ego_vel, s.ego_vel - r.v_max);
    audit.min_gap_margin = std::min(audit.min_gap_margin, margin);
    audit.max_speed_excess = std::max(audit.max_speed_excess, excess);
    if (margin < -0.1 || excess > 0.01) ++audit.violations;
  }
  return audit;
}

void write_rollout_csv(std::ostream& out, const Rollout& r) {
  out << "t,ego_pos,ego_vel,ego_acc,leader_pos,leader_vel,gap,condition,N_sampled\n";
  for (const auto& s : r.steps) {
    out << format_real(s.t) << ',' << format_real(s.ego_pos) << ',' << format_real(s.ego_vel) << ','
        << format_real(s.ego_acc) << ',' << format_real(s.leader_pos) << ','
        << format_real(s.leader_vel) << ',' << format_real(s.gap()) << ',' << to_string(s.condition)
        << ',' << format_real(s.horizon) << '\n';
  }
}

}  // namespace rrdm
