#include "rrdm/irl.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "rrdm/bfgs.hpp"
#include "rrdm/error.hpp"
#include "rrdm/parallel.hpp"

namespace rrdm {
namespace {

struct WindowProblem {
  KinematicPoint init;
  std::vector<LeaderPoint> leader;
};

std::vector<WindowProblem> windows_of(const TrajectorySegment& seg, double horizon_s) {
  std::vector<WindowProblem> out;
  for (const auto& sub : partition_segment(seg, horizon_s)) {
    out.push_back({sub.initial_state(), leader_points(sub.samples)});
  }
  if (out.empty()) fail(ErrorKind::kInvalidArgument, "segment has no planning windows");
  return out;
}

FeatureVector mean_of(DrivingCondition condition, const std::vector<FeatureVector>& vs) {
  FeatureVector mean;
  mean.condition = condition;
  mean.values.assign(active_features(condition).size(), 0.0);
  for (const auto& v : vs) {
    for (std::size_t i = 0; i < mean.values.size(); ++i) mean.values[i] += v.values[i];
  }
  for (auto& v : mean.values) v /= static_cast<double>(vs.size());
  return mean;
}

void check_weights(std::span<const double> weights, DrivingCondition condition) {
  if (weights.size() != active_features(condition).size()) {
    fail(ErrorKind::kInvalidArgument, "weight vector has " + std::to_string(weights.size()) +
                                          " entries but condition '" +
                                          std::string(to_string(condition)) + "' uses " +
                                          std::to_string(active_features(condition).size()));
  }
}

}  // namespace

void LearnerConfig::validate() const {
  if (!(learning_rate > 0.0)) fail(ErrorKind::kInvalidArgument, "learning rate must be positive");
  if (!(grad_tol > 0.0)) fail(ErrorKind::kInvalidArgument, "grad_tol must be positive");
  if (max_iters < 1) fail(ErrorKind::kInvalidArgument, "max_iters must be at least 1");
  if (horizons.empty()) fail(ErrorKind::kInvalidArgument, "candidate horizon set is empty");
  for (double n : horizons) {
    if (!(n > 0.0) || n > segment_length) {
      fail(ErrorKind::kInvalidArgument, "candidate horizon " + format_real(n) +
                                            " s outside (0, H]");
    }
  }
  if (tau && !(*tau > 0.0)) fail(ErrorKind::kInvalidArgument, "tau must be positive");
  if (!(d_s > 0.0)) fail(ErrorKind::kInvalidArgument, "d_s must be positive");
}

std::vector<KinematicPoint> sample_quintic(const QuinticCoeffs& c, std::size_t count, double dt) {
  std::vector<KinematicPoint> out(count);
  for (std::size_t k = 0; k < count; ++k) out[k] = eval_quintic(c, static_cast<double>(k) * dt);
  return out;
}

SubsegmentPlan optimize_subsegment(const KinematicPoint& init, std::span<const LeaderPoint> leader,
                                   std::span<const double> weights, DrivingCondition condition,
                                   const DriverConstants& constants, const NormalizationTable& table,
                                   double dt, const InnerOptimizerSettings& settings) {
  check_weights(weights, condition);
  if (!std::isfinite(init.pos) || !std::isfinite(init.vel) || !std::isfinite(init.acc)) {
    fail(ErrorKind::kInvalidArgument, "non-finite initial state");
  }
  if (leader.empty()) fail(ErrorKind::kInvalidArgument, "empty planning window");

  const std::size_t count = leader.size();
  const double horizon = static_cast<double>(count) * dt;
  // Free coefficients are optimized in units scaled by the horizon so that
  // each variable moves the end of the window by a comparable amount.
  const double s3 = std::pow(horizon, 3), s4 = s3 * horizon, s5 = s4 * horizon;
  const QuinticCoeffs base = coeffs_from_initial_state(init.pos, init.vel, init.acc);
  std::vector<KinematicPoint> points(count);

  auto coeffs_at = [&](const Eigen::VectorXd& z) {
    QuinticCoeffs c = base;
    c.y[2] = z[0] / s3;
    c.y[1] = z[1] / s4;
    c.y[0] = z[2] / s5;
    return c;
  };
  auto cost = [&](const Eigen::VectorXd& z) {
    const QuinticCoeffs c = coeffs_at(z);
    for (std::size_t k = 0; k < count; ++k) points[k] = eval_quintic(c, static_cast<double>(k) * dt);
    return normalized_cost(weights, compute_features(points, leader, condition, constants, dt),
                           table);
  };

  BfgsOptions opts;
  opts.max_iterations = settings.max_iterations;
  opts.max_evaluations = settings.max_evaluations;
  opts.gradient_tolerance = settings.gradient_tolerance;
  const auto result =
      minimize_bfgs(with_numeric_gradient(cost, settings.fd_step), Eigen::VectorXd::Zero(3), opts);
  if (!std::isfinite(result.value)) fail(ErrorKind::kNumerical, "inner objective is not finite");

  SubsegmentPlan plan;
  plan.coeffs = coeffs_at(result.x);
  plan.objective = result.value;
  plan.initial_objective = cost(Eigen::VectorXd::Zero(3));
  plan.converged = result.converged;
  if (plan.objective > plan.initial_objective) {
    plan.coeffs = base;
    plan.objective = plan.initial_objective;
  }
  return plan;
}

FeatureVector observed_features(const TrajectorySegment& seg, double horizon_s,
                                DrivingCondition condition, const DriverConstants& constants,
                                const NormalizationTable& table) {
  std::vector<FeatureVector> per_window;
  for (const auto& sub : partition_segment(seg, horizon_s)) {
    const auto ego = ego_points(sub.samples);
    const auto lead = leader_points(sub.samples);
    per_window.push_back(
        normalize(compute_features(ego, lead, condition, constants, seg.dt()), table));
  }
  if (per_window.empty()) fail(ErrorKind::kInvalidArgument, "segment has no planning windows");
  return mean_of(condition, per_window);
}

namespace {

FeatureVector expected_from_windows(const std::vector<WindowProblem>& windows,
                                    std::span<const double> weights, DrivingCondition condition,
                                    const DriverConstants& constants,
                                    const NormalizationTable& table, double dt,
                                    const InnerOptimizerSettings& settings) {
  std::vector<FeatureVector> per_window;
  per_window.reserve(windows.size());
  for (const auto& w : windows) {
    const auto plan =
        optimize_subsegment(w.init, w.leader, weights, condition, constants, table, dt, settings);
    const auto ego = sample_quintic(plan.coeffs, w.leader.size(), dt);
    per_window.push_back(
        normalize(compute_features(ego, w.leader, condition, constants, dt), table));
  }
  return mean_of(condition, per_window);
}

}  // namespace

FeatureVector expected_features(const TrajectorySegment& seg, std::span<const double> weights,
                                double horizon_s, DrivingCondition condition,
                                const DriverConstants& constants, const NormalizationTable& table,
                                const InnerOptimizerSettings& settings) {
  return expected_from_windows(windows_of(seg, horizon_s), weights, condition, constants, table,
                               seg.dt(), settings);
}

WeightLearnResult learn_segment_weights(const TrajectorySegment& seg, double horizon_s,
                                        DrivingCondition condition,
                                        const DriverConstants& constants,
                                        const NormalizationTable& table,
                                        const LearnerConfig& config) {
  const auto windows = windows_of(seg, horizon_s);
  const auto observed = observed_features(seg, horizon_s, condition, constants, table);
  const std::size_t dim = observed.values.size();

  WeightLearnResult out;
  std::vector<double> w(dim, 1.0);
  std::vector<double> grad(dim);
  for (int iter = 1; iter <= config.max_iters; ++iter) {
    const auto expected =
        expected_from_windows(windows, w, condition, constants, table, seg.dt(), config.inner);
    double sq = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      grad[i] = observed.values[i] - expected.values[i];
      sq += grad[i] * grad[i];
    }
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) fail(ErrorKind::kNumerical, "non-finite feature gradient");
    out.grad_trace.push_back(norm);
    out.weights = w;
    out.final_grad_norm = norm;
    out.iterations = iter;
    if (norm < config.grad_tol) {
      out.converged = true;
      break;
    }
    if (iter == config.max_iters) break;
    for (std::size_t i = 0; i < dim; ++i) {
      w[i] -= config.learning_rate * grad[i];
      if (w[i] < 0.0) {
        w[i] = 0.0;
        out.hit_bound = true;
      }
    }
  }
  return out;
}

double pick_best_horizon(const std::map<double, WeightLearnResult>& per_horizon) {
  if (per_horizon.empty()) fail(ErrorKind::kInvalidArgument, "no horizon results");
  double best = per_horizon.begin()->first;
  double best_norm = per_horizon.begin()->second.final_grad_norm;
  for (const auto& [n, r] : per_horizon) {
    if (r.final_grad_norm < best_norm) {
      best = n;
      best_norm = r.final_grad_norm;
    }
  }
  return best;
}

SegmentLearnResult select_horizon(const TrajectorySegment& seg, DrivingCondition condition,
                                  const DriverConstants& constants,
                                  const NormalizationTable& table, const LearnerConfig& config) {
  SegmentLearnResult out;
  out.condition = condition;
  for (double n : config.horizons) {
    out.per_horizon[n] = learn_segment_weights(seg, n, condition, constants, table, config);
  }
  out.best_horizon = pick_best_horizon(out.per_horizon);
  const auto& best = out.per_horizon.at(out.best_horizon);
  out.weights = best.weights;
  out.final_grad_norm = best.final_grad_norm;
  return out;
}

std::string segment_id(const TrajectorySegment& seg, std::size_t index) {
  return seg.parent + "#" + std::to_string(index);
}

LearningOutcome learn_all(std::span<const LeaderFollowerLog> demos, const LearnerConfig& config) {
  config.validate();
  if (demos.empty()) fail(ErrorKind::kInvalidArgument, "empty demonstration set");

  struct Item {
    TrajectorySegment seg;
    std::string id;
    DrivingCondition condition;
  };
  std::vector<Item> items;
  std::vector<double> v_ds;
  for (const auto& log : demos) {
    auto segs = segment_log(log, config.segment_length);
    for (std::size_t i = 0; i < segs.size(); ++i) {
      const auto condition = classify_condition(segs[i], config.thresholds);
      auto id = segment_id(segs[i], i);
      items.push_back({std::move(segs[i]), std::move(id), condition});
    }
    v_ds.push_back(log.v_d);
  }

  LearningOutcome out;
  out.constants.d_s = config.d_s;
  std::sort(v_ds.begin(), v_ds.end());
  out.constants.v_d = v_ds[v_ds.size() / 2];
  if (config.tau) {
    out.constants.tau = *config.tau;
  } else {
    std::vector<TrajectorySegment> steady;
    for (const auto& it : items) {
      if (it.condition == DrivingCondition::kSteadyCarFollowing) steady.push_back(it.seg);
    }
    out.constants.tau = estimate_tau(steady);
  }

  auto constants_for = [&](const TrajectorySegment& seg) {
    DriverConstants c = out.constants;
    c.v_d = seg.v_d;
    return c;
  };

  std::map<DrivingCondition, std::vector<FeatureVector>> groups;
  for (const auto& it : items) {
    const auto c = constants_for(it.seg);
    for (double n : config.horizons) {
      for (const auto& sub : partition_segment(it.seg, n)) {
        groups[it.condition].push_back(compute_features(
            ego_points(sub.samples), leader_points(sub.samples), it.condition, c, it.seg.dt()));
      }
    }
  }
  out.table = fit_normalization(groups);

  out.segments.resize(items.size());
  parallel_for(items.size(), config.threads, [&](std::size_t i) {
    const auto& it = items[i];
    auto r = select_horizon(it.seg, it.condition, constants_for(it.seg), out.table, config);
    r.segment_id = it.id;
    out.segments[i] = std::move(r);
  });

  for (double n : config.horizons) out.horizon_counts[n] = 0;
  for (const auto& r : out.segments) {
    out.pools[r.condition].push_back(r.weights);
    ++out.horizon_counts[r.best_horizon];
    auto& per = out.condition_horizon_counts[r.condition];
    if (per.empty()) {
      for (double n : config.horizons) per[n] = 0;
    }
    ++per[r.best_horizon];
  }
  return out;
}

}  // namespace rrdm
