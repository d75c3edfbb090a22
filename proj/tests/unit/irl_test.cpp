#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "rrdm/error.hpp"
#include "rrdm/harness.hpp"
#include "rrdm/irl.hpp"

using namespace rrdm;

namespace {

constexpr double kDt = 0.1;
const DrivingCondition kSteady = DrivingCondition::kSteadyCarFollowing;

NormalizationTable unit_table() {
  NormalizationTable t;
  t.ranges[kSteady] = {{0, 10}, {0, 100}, {0, 100}, {0, 500}};
  t.ranges[DrivingCondition::kFreeMotion] = {{0, 10}, {0, 100}, {0, 1}};
  t.ranges[DrivingCondition::kUnsteadyCarFollowing] = {{0, 10}, {0, 100}, {0, 100}, {0, 500}};
  return t;
}

// Ego at v with gap d_c = v tau + d_s behind a leader at the same speed.
TrajectorySegment equilibrium_segment(double v, const DriverConstants& k, double seconds = 12.0) {
  TrajectorySegment seg;
  seg.parent = "eq";
  seg.v_d = v;
  seg.duration_s = seconds;
  const double gap = v * k.tau + k.d_s;
  const auto n = static_cast<int>(std::lround(seconds / kDt));
  for (int i = 0; i < n; ++i) {
    const double t = i * kDt;
    seg.samples.push_back({t, v * t + gap, v, v * t, v, 0.0});
  }
  return seg;
}

std::vector<LeaderPoint> still_leader(std::size_t n, double pos) {
  return std::vector<LeaderPoint>(n, LeaderPoint{pos, 0.0});
}

}  // namespace

TEST_CASE("desired-speed-only weights keep an ego already at v_d") {
  const DriverConstants k{1.2, 5.0, 15.0};
  const std::vector<double> w{0, 1, 0, 0};
  const auto plan = optimize_subsegment({0.0, 15.0, 0.0}, still_leader(30, 500.0), w, kSteady, k,
                                        unit_table(), kDt);
  CHECK(std::abs(plan.coeffs.y[2]) < 1e-6);
  CHECK(std::abs(plan.coeffs.y[1]) < 1e-6);
  CHECK(std::abs(plan.coeffs.y[0]) < 1e-6);
  CHECK(plan.objective < 1e-12);
}

TEST_CASE("acceleration-only optimum beats a coefficient grid") {
  const DriverConstants k{1.2, 5.0, 15.0};
  const std::vector<double> w{1, 0, 0, 0};
  const auto table = unit_table();
  const KinematicPoint init{0.0, 10.0, 0.8};
  const auto leader = still_leader(20, 200.0);
  const auto plan = optimize_subsegment(init, leader, w, kSteady, k, table, kDt);
  CHECK(plan.objective <= plan.initial_objective);

  const auto base = coeffs_from_initial_state(init.pos, init.vel, init.acc);
  double grid_min = std::numeric_limits<double>::infinity();
  for (int a = -20; a <= 20; ++a) {
    for (int b = -20; b <= 20; ++b) {
      for (int c = -20; c <= 20; ++c) {
        QuinticCoeffs q = base;
        q.y[2] = 0.05 * a;
        q.y[1] = 0.05 * b;
        q.y[0] = 0.05 * c;
        const auto pts = sample_quintic(q, leader.size(), kDt);
        grid_min = std::min(grid_min, normalized_cost(w, compute_features(pts, leader, kSteady, k, kDt), table));
      }
    }
  }
  CHECK(plan.objective <= grid_min + 1e-9);
}

TEST_CASE("zero weights fall back to the zero-guess plan") {
  const DriverConstants k{1.2, 5.0, 15.0};
  const std::vector<double> w{0, 0, 0, 0};
  const KinematicPoint init{3.0, 12.0, -1.0};
  const auto plan = optimize_subsegment(init, still_leader(30, 100.0), w, kSteady, k, unit_table(), kDt);
  const auto base = coeffs_from_initial_state(init.pos, init.vel, init.acc);
  CHECK(plan.coeffs.y == base.y);
}

TEST_CASE("weight dimension is checked") {
  const std::vector<double> w{1, 1, 1};
  CHECK_THROWS_AS(optimize_subsegment({0, 10, 0}, still_leader(20, 50), w, kSteady, {}, unit_table(), kDt),
                  Error);
}

TEST_CASE("argmin is invariant to positive weight scaling") {
  const DriverConstants k{1.2, 5.0, 15.0};
  const auto table = unit_table();
  std::vector<LeaderPoint> leader;
  for (int i = 0; i < 30; ++i) leader.push_back({25.0 + 12.0 * i * kDt, 12.0});
  const std::vector<double> w{0.9, 0.8, 1.3, 1.1};
  std::vector<double> w5 = w;
  for (auto& x : w5) x *= 5.0;
  const KinematicPoint init{0.0, 10.0, 0.3};
  const auto a = optimize_subsegment(init, leader, w, kSteady, k, table, kDt);
  const auto b = optimize_subsegment(init, leader, w5, kSteady, k, table, kDt);
  const auto pa = sample_quintic(a.coeffs, leader.size(), kDt);
  const auto pb = sample_quintic(b.coeffs, leader.size(), kDt);
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(std::abs(pa[i].vel - pb[i].vel) < 1e-3);
  CHECK(b.objective == doctest::Approx(5.0 * a.objective).epsilon(1e-6));
}

TEST_CASE("observed features of an equilibrium segment vanish") {
  const DriverConstants k{1.5, 5.0, 10.0};
  const auto seg = equilibrium_segment(10.0, k);
  const auto f = observed_features(seg, 3.0, kSteady, k, unit_table());
  for (double v : f.values) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("observed features average identical windows") {
  const DriverConstants k{1.5, 5.0, 14.0};
  const auto seg = equilibrium_segment(10.0, k);
  auto table = unit_table();
  table.ranges[kSteady][1].max = 1000.0;  // keeps the 12 s window below the clamp
  const auto whole = observed_features(seg, 12.0, kSteady, k, table);
  const auto parts = observed_features(seg, 2.0, kSteady, k, table);
  for (std::size_t i = 0; i < whole.values.size(); ++i) {
    CHECK(parts.values[i] == doctest::Approx(whole.values[i] / 6.0).epsilon(1e-9));
  }
}

TEST_CASE("expected acceleration feature is zero on a constant-speed segment") {
  const DriverConstants k{1.5, 5.0, 10.0};
  const auto seg = equilibrium_segment(10.0, k);
  const std::vector<double> w{1, 0, 0, 0};
  const auto f = expected_features(seg, w, 3.0, kSteady, k, unit_table());
  CHECK(f.values[0] < 1e-12);
}

TEST_CASE("a segment optimal for all-ones weights converges at once") {
  const DriverConstants k{1.5, 5.0, 10.0};
  const auto seg = equilibrium_segment(10.0, k);
  LearnerConfig cfg;
  const auto r = learn_segment_weights(seg, 3.0, kSteady, k, unit_table(), cfg);
  CHECK(r.converged);
  CHECK(r.iterations == 1);
  CHECK(r.weights == std::vector<double>(4, 1.0));
}

TEST_CASE("learning on generated demos lowers the gradient, stays non-negative and is deterministic") {
  auto driver = reference_driver(3.0);
  auto scenarios = builtin_scenarios();
  std::erase_if(scenarios, [](const auto& s) { return s.id != "stop_go_30"; });
  const auto logs = generate_synthetic_demos(driver, scenarios, 1, 3);
  const auto segs = segment_log(logs.front(), 12.0);
  const auto& seg = segs[2];
  const auto condition = classify_condition(seg);
  DriverConstants k = driver.constants;
  k.v_d = seg.v_d;
  LearnerConfig cfg;
  cfg.max_iters = 150;
  const auto a = learn_segment_weights(seg, 3.0, condition, k, driver.table, cfg);
  const auto b = learn_segment_weights(seg, 3.0, condition, k, driver.table, cfg);
  CHECK(a.grad_trace.back() < a.grad_trace.front());
  for (double w : a.weights) CHECK(w >= 0.0);
  CHECK(a.weights == b.weights);
  CHECK(a.grad_trace == b.grad_trace);
}

TEST_CASE("horizon selection picks the smallest final norm, ties to the smaller horizon") {
  std::map<double, WeightLearnResult> m;
  m[2.0].final_grad_norm = 0.5;
  m[3.0].final_grad_norm = 0.2;
  m[4.0].final_grad_norm = 0.2;
  CHECK(pick_best_horizon(m) == 3.0);
  m[2.0].final_grad_norm = 0.2;
  CHECK(pick_best_horizon(m) == 2.0);
  m[4.0].final_grad_norm = 0.01;
  CHECK(pick_best_horizon(m) == 4.0);
  CHECK_THROWS_AS(pick_best_horizon({}), Error);
}

TEST_CASE("learn_all bookkeeping on a single steady segment") {
  const DriverConstants k{1.5, 5.0, 10.0};
  LeaderFollowerLog log;
  log.scenario_id = "eq";
  log.v_d = 10.0;
  log.samples = equilibrium_segment(10.0, k, 12.1).samples;
  for (auto& s : log.samples) s.leader_pos += 0.5 * std::sin(s.t);
  LearnerConfig cfg;
  cfg.max_iters = 20;
  cfg.threads = 1;
  const std::vector<LeaderFollowerLog> demos{log};
  const auto out = learn_all(demos, cfg);
  CHECK(out.segments.size() == 1);
  CHECK(out.pools.at(kSteady).size() == 1);
  CHECK(out.pools.count(DrivingCondition::kFreeMotion) == 0);
  std::size_t total = 0;
  for (const auto& [n, c] : out.horizon_counts) total += c;
  CHECK(total == 1);
  CHECK(out.constants.tau == doctest::Approx(1.95).epsilon(1e-3));
  CHECK_THROWS_AS(learn_all(std::span<const LeaderFollowerLog>{}, cfg), Error);
}

TEST_CASE("learner config validation") {
  LearnerConfig cfg;
  cfg.learning_rate = 0.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.horizons = {13.0};
  CHECK_THROWS_AS(cfg.validate(), Error);
}
