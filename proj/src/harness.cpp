#include "rrdm/harness.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>

#include "rrdm/error.hpp"
#include "rrdm/parallel.hpp"

namespace rrdm {

std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(master),
                                   static_cast<std::uint32_t>(master >> 32)};
  for (auto p : path) {
    words.push_back(static_cast<std::uint32_t>(p));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

namespace {

constexpr double kRate = 10.0;

struct Window {
  std::vector<LogSample> samples;
  KinematicPoint end;
};

// Runs one segment with a fixed condition; nullopt when the ego hits the leader.
std::optional<Window> drive_segment(const GroundTruthDriver& driver, DrivingCondition condition,
                                    const std::vector<LogSample>& leader, std::size_t first,
                                    std::size_t count, KinematicPoint state, double v_d,
                                    std::normal_distribution<double>& noise, Rng& rng) {
  const double dt = 1.0 / kRate;
  const auto m = static_cast<std::size_t>(std::llround(driver.horizon * kRate));
  DriverConstants constants = driver.constants;
  constants.v_d = v_d;
  Window w;
  w.samples.reserve(count);
  for (std::size_t b = 0; b < count; b += m) {
    std::vector<LeaderPoint> lead(m);
    for (std::size_t k = 0; k < m; ++k) {
      const auto& l = leader[first + b + k];
      lead[k] = {l.leader_pos, l.leader_vel};
    }
    SubsegmentPlan plan;
    try {
      plan = optimize_subsegment(state, lead, driver.weights.at(condition), condition, constants,
                                 driver.table, dt);
    } catch (const Error&) {
      return std::nullopt;
    }
    KinematicPoint x = state;
    for (std::size_t k = 0; k < m; ++k) {
      if (driver.noise_std > 0.0) {
        // Noisy execution: double-integrate the planned acceleration plus noise.
        if (k > 0) {
          const double a = x.acc;
          x.pos += x.vel * dt + 0.5 * a * dt * dt;
          x.vel = std::max(0.0, x.vel + a * dt);
        }
        x.acc = eval_quintic(plan.coeffs, static_cast<double>(k) * dt).acc +
                driver.noise_std * noise(rng);
      } else {
        x = eval_quintic(plan.coeffs, static_cast<double>(k) * dt);
      }
      const auto& l = leader[first + b + k];
      if (!(l.leader_pos - x.pos > 0.0) || x.vel < -1e-9) return std::nullopt;
      w.samples.push_back({l.t, l.leader_pos, l.leader_vel, x.pos, x.vel, x.acc});
    }
    if (driver.noise_std > 0.0) {
      const double a = x.acc;
      state = {x.pos + x.vel * dt + 0.5 * a * dt * dt, std::max(0.0, x.vel + a * dt),
               eval_quintic(plan.coeffs, static_cast<double>(m) * dt).acc};
    } else {
      state = eval_quintic(plan.coeffs, static_cast<double>(m) * dt);
    }
  }
  w.end = state;
  return w;
}

LeaderFollowerLog block_quintic_demo(const GroundTruthDriver& driver,
                                     const LeaderScenario& scenario, std::uint64_t seed) {
  LeaderFollowerLog log;
  log.scenario_id = scenario.id;
  log.rate_hz = kRate;
  log.v_d = scenario.v_d;
  const auto leader = leader_track(scenario, kRate);
  const std::size_t seg_len = steps_for(driver.segment_length, kRate);
  const std::size_t n_seg = (leader.size() - 1) / seg_len;
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);

  KinematicPoint state{0.0,
                       scenario.initial_speed >= 0.0 ? scenario.initial_speed : scenario.speed(0.0),
                       0.0};
  for (std::size_t s = 0; s < n_seg; ++s) {
    const std::size_t first = s * seg_len;
    const auto& l0 = leader[first];
    // Try the condition the current state suggests first, keep the first
    // whose 12 s average classifies back to the same condition.
    const auto guess = classify_instant(l0.leader_pos - state.pos, state.vel, l0.leader_vel,
                                        driver.thresholds);
    std::vector<DrivingCondition> order{guess};
    for (auto c : kAllConditions) {
      if (c != guess) order.push_back(c);
    }
    std::optional<Window> chosen;
    for (auto c : order) {
      if (!driver.weights.count(c)) continue;
      const Rng saved = rng;
      auto w = drive_segment(driver, c, leader, first, seg_len, state, scenario.v_d, noise, rng);
      if (!w) {
        rng = saved;
        continue;
      }
      TrajectorySegment seg;
      seg.samples = w->samples;
      seg.duration_s = driver.segment_length;
      const bool consistent = classify_condition(seg, driver.thresholds) == c;
      if (!chosen || consistent) chosen = std::move(w);
      if (consistent) break;
      rng = saved;
    }
    if (!chosen) {
      fail(ErrorKind::kInfeasible, "ground-truth driver collides in scenario '" + scenario.id +
                                       "' segment " + std::to_string(s));
    }
    log.samples.insert(log.samples.end(), chosen->samples.begin(), chosen->samples.end());
    state = chosen->end;
  }
  const auto& last = leader[n_seg * seg_len];
  log.samples.push_back({last.t, last.leader_pos, last.leader_vel, state.pos, state.vel, state.acc});
  return log;
}

LeaderFollowerLog receding_horizon_demo(const GroundTruthDriver& driver,
                                        const LeaderScenario& scenario, std::uint64_t seed,
                                        const PlannerConfig& planner) {
  LeaderFollowerLog track;
  track.scenario_id = scenario.id;
  track.rate_hz = kRate;
  track.v_d = scenario.v_d;
  track.samples = leader_track(scenario, kRate);
  track.samples.front().ego_vel =
      scenario.initial_speed >= 0.0 ? scenario.initial_speed : scenario.speed(0.0);
  DriverConstants constants = driver.constants;
  constants.v_d = scenario.v_d;
  const auto model = degenerate_model(driver.weights, driver.horizon, driver.table, constants);
  PlannerConfig cfg = planner;
  cfg.acc_noise_std = driver.noise_std;
  cfg.d_s = driver.constants.d_s;
  cfg.thresholds = driver.thresholds;
  const auto r = rollout_scenario(track, model, cfg, seed);
  LeaderFollowerLog log = track;
  for (std::size_t i = 0; i < r.steps.size(); ++i) {
    const auto& s = r.steps[i];
    log.samples[i] = {s.t, s.leader_pos, s.leader_vel, s.ego_pos, s.ego_vel, s.ego_acc};
  }
  return log;
}

}  // namespace

std::string_view to_string(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::kCruising: return "cruising";
    case ScenarioKind::kStopAndGo: return "stop_and_go";
    case ScenarioKind::kTransient: return "transient";
  }
  return "unknown";
}

double LeaderScenario::speed(double t) const {
  if (t <= knots.front().t) return knots.front().v;
  for (std::size_t i = 1; i < knots.size(); ++i) {
    if (t <= knots[i].t) {
      const double a = (t - knots[i - 1].t) / (knots[i].t - knots[i - 1].t);
      return knots[i - 1].v + a * (knots[i].v - knots[i - 1].v);
    }
  }
  return knots.back().v;
}

double LeaderScenario::distance(double t) const {
  double d = 0.0;
  for (std::size_t i = 1; i < knots.size(); ++i) {
    const double t0 = knots[i - 1].t;
    const double t1 = std::min(t, knots[i].t);
    if (t1 <= t0) break;
    d += 0.5 * (knots[i - 1].v + speed(t1)) * (t1 - t0);
  }
  if (t > knots.back().t) d += knots.back().v * (t - knots.back().t);
  return d;
}

std::vector<LeaderScenario> builtin_scenarios() {
  std::vector<LeaderScenario> out;
  const double T = 120.0;
  // Cruising: the speed limit sits above the leader in the first two, so the
  // ego keeps pressing into a steady gap; the third is free motion far behind.
  out.push_back({"cruise_15", ScenarioKind::kCruising, T, {{0, 15}, {T, 15}}, 20.0, 30.0});
  out.push_back({"cruise_20", ScenarioKind::kCruising, T, {{0, 20}, {T, 20}}, 25.0, 30.0});
  out.push_back({"cruise_25", ScenarioKind::kCruising, T, {{0, 25}, {T, 25}}, 24.0, 160.0, 18.0});
  for (double period : {20.0, 30.0, 40.0}) {
    LeaderScenario s{"stop_go_" + std::to_string(static_cast<int>(period)),
                     ScenarioKind::kStopAndGo, T, {}, 10.0, 20.0};
    // Per cycle: 10 m/s plateau for 0.1 P, then linear ramps down to 0 and back up.
    const double hold = 0.1 * period, ramp = 0.45 * period;
    s.knots.push_back({0.0, 10.0});
    for (double t = 0.0; t + period <= T + 1e-9; t += period) {
      s.knots.push_back({t + hold, 10.0});
      s.knots.push_back({t + hold + ramp, 0.0});
      s.knots.push_back({t + period, 10.0});
    }
    if (s.knots.back().t < T) s.knots.push_back({T, s.knots.back().v});
    out.push_back(std::move(s));
  }
  for (double rate : {0.5, 1.0, 2.0}) {
    const double t1 = 20.0, t2 = t1 + 15.0 / rate, t3 = t2 + 20.0, t4 = t3 + 13.0 / rate;
    char id[32];
    std::snprintf(id, sizeof id, "transient_%.1f", rate);
    out.push_back({id, ScenarioKind::kTransient, T,
                   {{0, 10}, {t1, 10}, {t2, 25}, {t3, 25}, {t4, 12}, {T, 12}}, 18.0, 25.0});
  }
  return out;
}

void GroundTruthDriver::validate() const {
  if (std::abs(horizon * 10.0 - std::round(horizon * 10.0)) > 1e-9 || !(horizon > 0.0)) {
    fail(ErrorKind::kInvalidArgument, "ground-truth horizon must be a positive multiple of 0.1 s");
  }
  const double blocks = segment_length / horizon;
  if (mode == DemoMode::kBlockQuintic && std::abs(blocks - std::round(blocks)) > 1e-9) {
    fail(ErrorKind::kInvalidArgument, "segment length must be a multiple of the horizon");
  }
  if (!(noise_std >= 0.0)) fail(ErrorKind::kInvalidArgument, "noise_std must be non-negative");
  for (const auto& [c, w] : weights) {
    if (w.size() != active_features(c).size()) {
      fail(ErrorKind::kInvalidArgument, "ground-truth weights do not match the condition");
    }
    for (double v : w) {
      if (!(v >= 0.0)) fail(ErrorKind::kInvalidArgument, "ground-truth weights must be >= 0");
    }
    if (!table.covers(c)) fail(ErrorKind::kInvalidArgument, "driver table misses a condition");
  }
  if (weights.empty()) fail(ErrorKind::kInvalidArgument, "ground-truth driver has no weights");
}

GroundTruthDriver reference_driver(double horizon) {
  using C = DrivingCondition;
  GroundTruthDriver d;
  d.horizon = horizon;
  d.weights[C::kSteadyCarFollowing] = {0.9, 0.9, 1.1, 1.2};
  d.weights[C::kFreeMotion] = {0.8, 1.2, 1.0};
  d.weights[C::kUnsteadyCarFollowing] = {0.9, 0.9, 1.1, 1.2};
  d.table.ranges[C::kSteadyCarFollowing] = {{0, 18.9}, {0, 330}, {0, 35.1}, {0, 200}};
  d.table.ranges[C::kFreeMotion] = {{0, 12.0}, {0, 38.0}, {0, 6.6e-71}};
  d.table.ranges[C::kUnsteadyCarFollowing] = {{0, 13.7}, {0, 343}, {0, 19.6}, {0, 2990}};
  return d;
}

std::vector<LogSample> leader_track(const LeaderScenario& scenario, double rate_hz) {
  const std::size_t n = steps_for(scenario.duration, rate_hz);
  std::vector<LogSample> out(n + 1);
  for (std::size_t k = 0; k <= n; ++k) {
    const double t = static_cast<double>(k) / rate_hz;
    out[k].t = t;
    out[k].leader_pos = scenario.initial_gap + scenario.distance(t);
    out[k].leader_vel = scenario.speed(t);
  }
  return out;
}

std::vector<LeaderFollowerLog> generate_synthetic_demos(const GroundTruthDriver& driver,
                                                        std::span<const LeaderScenario> scenarios,
                                                        int repeats, std::uint64_t seed,
                                                        const PlannerConfig& planner) {
  driver.validate();
  if (repeats < 1) fail(ErrorKind::kInvalidArgument, "repeats must be >= 1");
  const auto r = static_cast<std::size_t>(repeats);
  std::vector<LeaderFollowerLog> logs(scenarios.size() * r);
  parallel_for(logs.size(), 0, [&](std::size_t i) {
    const std::size_t s = i / r, rep = i % r;
    const auto log_seed = derive_seed(seed, {s, rep});
    auto log = driver.mode == DemoMode::kBlockQuintic
                   ? block_quintic_demo(driver, scenarios[s], log_seed)
                   : receding_horizon_demo(driver, scenarios[s], log_seed, planner);
    log.scenario_id = scenarios[s].id;
    validate_log(log);
    logs[i] = std::move(log);
  });
  return logs;
}

RmseResult rmse(std::span<const TrajectoryPoint> observed, std::span<const TrajectoryPoint> predicted) {
  if (observed.size() != predicted.size() || observed.empty()) {
    fail(ErrorKind::kInvalidArgument, "RMSE needs two non-empty trajectories of equal length (" +
                                          std::to_string(observed.size()) + " vs " +
                                          std::to_string(predicted.size()) + ")");
  }
  double sv = 0.0, sa = 0.0;
  for (std::size_t k = 0; k < observed.size(); ++k) {
    if (std::abs(observed[k].t - predicted[k].t) > 1e-6) {
      fail(ErrorKind::kInvalidArgument, "RMSE time grids are not aligned");
    }
    const double dv = observed[k].vel - predicted[k].vel;
    const double da = observed[k].acc - predicted[k].acc;
    sv += dv * dv;
    sa += da * da;
  }
  const auto n = static_cast<double>(observed.size());
  return {std::sqrt(sv / n), std::sqrt(sa / n)};
}

std::vector<TrajectoryPoint> trajectory_of(const LeaderFollowerLog& log) {
  std::vector<TrajectoryPoint> out;
  out.reserve(log.samples.size());
  for (const auto& s : log.samples) out.push_back({s.t, s.ego_vel, s.ego_acc});
  return out;
}

std::vector<TrajectoryPoint> trajectory_of(const Rollout& rollout) {
  std::vector<TrajectoryPoint> out;
  out.reserve(rollout.steps.size());
  for (const auto& s : rollout.steps) out.push_back({s.t, s.ego_vel, s.ego_acc});
  return out;
}

std::vector<TrajectoryPoint> mean_trajectory(std::span<const std::vector<TrajectoryPoint>> runs) {
  if (runs.empty()) fail(ErrorKind::kInvalidArgument, "no trajectories to average");
  std::vector<TrajectoryPoint> mean = runs.front();
  for (std::size_t r = 1; r < runs.size(); ++r) {
    if (runs[r].size() != mean.size()) {
      fail(ErrorKind::kInvalidArgument, "trajectories to average differ in length");
    }
    for (std::size_t k = 0; k < mean.size(); ++k) {
      mean[k].vel += runs[r][k].vel;
      mean[k].acc += runs[r][k].acc;
    }
  }
  const auto n = static_cast<double>(runs.size());
  for (auto& p : mean) {
    p.vel /= n;
    p.acc /= n;
  }
  return mean;
}

std::vector<double> rescale_weights(std::span<const double> weights, DrivingCondition condition,
                                    const NormalizationTable& from, const NormalizationTable& to) {
  const auto& rf = from.at(condition);
  const auto& rt = to.at(condition);
  if (weights.size() != rf.size() || weights.size() != rt.size()) {
    fail(ErrorKind::kInvalidArgument, "weight dimension does not match the tables");
  }
  std::vector<double> out(weights.size());
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out[i] = weights[i] * (rt[i].max - rt[i].min) / (rf[i].max - rf[i].min);
  }
  return out;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) {
    fail(ErrorKind::kInvalidArgument, "cosine similarity needs equal non-empty vectors");
  }
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

SplitIndices split_indices(std::span<const std::string> scenario_ids, double test_fraction,
                           std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    fail(ErrorKind::kInvalidArgument, "test fraction must lie in [0, 1)");
  }
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::size_t>> by_scenario;
  for (std::size_t i = 0; i < scenario_ids.size(); ++i) {
    auto& v = by_scenario[scenario_ids[i]];
    if (v.empty()) order.push_back(scenario_ids[i]);
    v.push_back(i);
  }
  SplitIndices out;
  for (std::size_t s = 0; s < order.size(); ++s) {
    auto idx = by_scenario[order[s]];
    Rng rng(derive_seed(seed, {s}));
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(idx.size())));
    n_test = std::min(n_test, idx.size() - 1);
    std::vector<std::size_t> te(idx.begin(), idx.begin() + static_cast<long>(n_test));
    std::vector<std::size_t> tr(idx.begin() + static_cast<long>(n_test), idx.end());
    std::sort(te.begin(), te.end());
    std::sort(tr.begin(), tr.end());
    out.train.insert(out.train.end(), tr.begin(), tr.end());
    out.test.insert(out.test.end(), te.begin(), te.end());
  }
  return out;
}

void split_train_test(std::span<const LeaderFollowerLog> logs, double test_fraction,
                      std::uint64_t seed, std::vector<LeaderFollowerLog>& train,
                      std::vector<LeaderFollowerLog>& test) {
  std::vector<std::string> ids;
  for (const auto& l : logs) ids.push_back(l.scenario_id);
  const auto split = split_indices(ids, test_fraction, seed);
  train.clear();
  test.clear();
  for (auto i : split.train) train.push_back(logs[i]);
  for (auto i : split.test) test.push_back(logs[i]);
}

RecoveryReport run_recovery_experiment(const GroundTruthDriver& driver,
                                       const RecoveryConfig& config, std::uint64_t seed) {
  std::vector<LeaderScenario> scenarios;
  for (auto& s : builtin_scenarios()) {
    if (config.scenario_ids.empty() ||
        std::find(config.scenario_ids.begin(), config.scenario_ids.end(), s.id) !=
            config.scenario_ids.end()) {
      scenarios.push_back(std::move(s));
    }
  }
  if (scenarios.empty()) fail(ErrorKind::kInvalidArgument, "no scenarios selected");
  if (config.samples < 0) fail(ErrorKind::kInvalidArgument, "samples must be >= 0");

  RecoveryReport rep;
  rep.true_horizon = driver.horizon;
  const auto demos =
      generate_synthetic_demos(driver, scenarios, config.repeats, derive_seed(seed, {1}), config.planner);
  std::vector<LeaderFollowerLog> train, test;
  split_train_test(demos, config.test_fraction, derive_seed(seed, {2}), train, test);

  LearnerConfig lc = config.learner;
  if (config.supply_tau) lc.tau = driver.constants.tau;
  lc.d_s = driver.constants.d_s;
  lc.thresholds = driver.thresholds;
  rep.learning = learn_all(train, lc);
  rep.model = fit_driver_model(rep.learning, lc.horizons, "{}", config.per_condition_horizons);

  const auto& segs = rep.learning.segments;
  rep.segments = segs.size();
  std::size_t hits = 0, converged = 0;
  std::vector<int> iterations;
  for (const auto& s : segs) {
    if (s.best_horizon == driver.horizon) ++hits;
    const auto& best = s.per_horizon.at(s.best_horizon);
    if (best.converged) ++converged;
    iterations.push_back(best.iterations);
    if (best.grad_trace.size() >= 500) {
      ++rep.traces_checked;
      if (!(best.grad_trace[499] < best.grad_trace[9])) rep.trace_decreasing = false;
    }
  }
  if (!segs.empty()) {
    rep.horizon_recovery = static_cast<double>(hits) / static_cast<double>(segs.size());
    rep.converged_fraction = static_cast<double>(converged) / static_cast<double>(segs.size());
    std::sort(iterations.begin(), iterations.end());
    const std::size_t n = iterations.size();
    rep.median_iterations = n % 2 ? iterations[n / 2]
                                  : 0.5 * (iterations[n / 2 - 1] + iterations[n / 2]);
  }
  for (std::size_t i = 0; i < rep.model.horizons.support.size(); ++i) {
    rep.pmf[rep.model.horizons.support[i]] = rep.model.horizons.probs[i];
  }
  for (const auto& [c, pool] : rep.learning.pools) {
    ConditionRecovery cr;
    cr.pool_size = pool.size();
    cr.mean_learned.assign(pool.front().size(), 0.0);
    for (const auto& w : pool) {
      for (std::size_t i = 0; i < w.size(); ++i) cr.mean_learned[i] += w[i] / static_cast<double>(pool.size());
    }
    auto it = driver.weights.find(c);
    if (it != driver.weights.end()) {
      cr.reference = rescale_weights(it->second, c, driver.table, rep.learning.table);
      cr.cosine = cosine_similarity(cr.mean_learned, cr.reference);
    }
    rep.conditions[c] = std::move(cr);
  }

  // Closed-loop replay of every held-out log.
  const auto n_samples = static_cast<std::size_t>(config.samples);
  std::vector<std::optional<Rollout>> rollouts(test.size() * n_samples);
  std::vector<std::string> errors(rollouts.size());
  parallel_for(rollouts.size(), lc.threads, [&](std::size_t i) {
    const std::size_t t = i / n_samples, k = i % n_samples;
    try {
      rollouts[i] = rollout_scenario(test[t], rep.model, config.planner, derive_seed(seed, {3, t, k}));
    } catch (const Error& e) {
      rollouts[i].reset();
      errors[i] = test[t].scenario_id + ": " + e.what();
    }
  });
  rep.min_gap_margin = rollouts.empty() ? 0.0 : std::numeric_limits<double>::infinity();
  double speed_sum = 0.0, acc_sum = 0.0;
  std::size_t scored = 0;
  for (std::size_t t = 0; t < test.size(); ++t) {
    std::vector<std::vector<TrajectoryPoint>> runs;
    for (std::size_t k = 0; k < n_samples; ++k) {
      const auto& r = rollouts[t * n_samples + k];
      if (!r) {
        if (rep.first_failure.empty()) rep.first_failure = errors[t * n_samples + k];
        ++rep.rollout_failures;
        continue;
      }
      ++rep.rollouts;
      const auto audit = audit_rollout(*r);
      rep.constraint_violations += audit.violations;
      rep.min_gap_margin = std::min(rep.min_gap_margin, audit.min_gap_margin);
      runs.push_back(trajectory_of(*r));
    }
    if (runs.empty()) continue;
    const auto err = rmse(trajectory_of(test[t]), mean_trajectory(runs));
    speed_sum += err.speed;
    acc_sum += err.acc;
    ++scored;
  }
  if (scored > 0) rep.heldout_rmse = {speed_sum / scored, acc_sum / scored};
  return rep;
}

}  // namespace rrdm
