#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "rrdm/error.hpp"
#include "rrdm/harness.hpp"
#include "rrdm/planner.hpp"

using namespace rrdm;

namespace {

const DrivingCondition kSteady = DrivingCondition::kSteadyCarFollowing;
const DrivingCondition kFree = DrivingCondition::kFreeMotion;
const DrivingCondition kUnsteady = DrivingCondition::kUnsteadyCarFollowing;

NormalizationTable table() { return reference_driver(3.0).table; }

LeaderFollowerLog cruise_log(double v, double gap, double seconds, double ego_v) {
  LeaderFollowerLog log;
  log.scenario_id = "cruise";
  log.v_d = v;
  const int n = static_cast<int>(std::lround(seconds * 10.0)) + 1;
  for (int i = 0; i < n; ++i) {
    const double t = i * 0.1;
    log.samples.push_back({t, gap + v * t, v, 0.0, ego_v, 0.0});
  }
  return log;
}

LearnedDriverModel fixed_model(double horizon) {
  const auto d = reference_driver(horizon);
  return degenerate_model(d.weights, horizon, d.table, d.constants);
}

}  // namespace

TEST_CASE("constant-velocity leader prediction") {
  auto p = predict_leader(100.0, 10.0, 2.0, 0.1);
  REQUIRE(p.size() == 20);
  CHECK(p.back().pos == doctest::Approx(120.0));
  p = predict_leader(50.0, 0.0, 3.0, 0.1);
  for (const auto& x : p) CHECK(x.pos == 50.0);
  p = predict_leader(50.0, 4.0, 0.1, 0.1);
  REQUIRE(p.size() == 1);
  CHECK(p[0].pos == doctest::Approx(50.4));
  CHECK_THROWS_AS(predict_leader(0.0, 1.0, 0.0, 0.1), Error);
}

TEST_CASE("plan integration follows the double integrator") {
  const std::vector<double> a{1.0, -2.0, 0.5};
  const auto s = integrate_plan({0.0, 10.0, 5.0, 0.0}, a, 0.1);
  REQUIRE(s.size() == 3);
  CHECK(s[0].pos == doctest::Approx(10.0 + 0.5 + 0.005));
  CHECK(s[0].vel == doctest::Approx(5.1));
  CHECK(s[1].vel == doctest::Approx(4.9));
  CHECK(s[2].acc == 0.5);
}

TEST_CASE("objective gradient matches finite differences") {
  const auto d = reference_driver(3.0);
  DriverConstants k = d.constants;
  k.v_d = 15.0;
  PlannerConfig cfg;
  const EgoState ego{0.0, 0.0, 12.0, 0.0};
  const auto pred = predict_leader(18.0, 10.0, 2.0, cfg.dt);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 2.0);
  for (auto c : kAllConditions) {
    Eigen::VectorXd a(20);
    for (auto& x : a) x = n(rng);
    Eigen::VectorXd g;
    nmpc_objective(ego, pred, d.weights.at(c), c, k, d.table, 20.0, cfg, a, &g);
    for (int i = 0; i < 20; i += 3) {
      Eigen::VectorXd ap = a, am = a;
      ap[i] += 1e-6;
      am[i] -= 1e-6;
      const double fd = (nmpc_objective(ego, pred, d.weights.at(c), c, k, d.table, 20.0, cfg, ap, nullptr) -
                         nmpc_objective(ego, pred, d.weights.at(c), c, k, d.table, 20.0, cfg, am, nullptr)) /
                        2e-6;
      CHECK(g[i] == doctest::Approx(fd).epsilon(1e-4).scale(1.0));
    }
  }
}

TEST_CASE("equilibrium holds for random steady weights") {
  const auto t = table();
  const DriverConstants k{1.2, 5.0, 20.0};
  PlannerConfig cfg;
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  const double gap = 20.0 * k.tau + k.d_s;
  const EgoState ego{0.0, 0.0, 20.0, 0.0};
  for (int i = 0; i < 25; ++i) {
    const std::vector<double> w{u(rng), u(rng), u(rng), u(rng)};
    const auto pred = predict_leader(gap, 20.0, 3.0, cfg.dt);
    const auto sol = solve_nmpc_step(ego, pred, w, kSteady, 3.0, k, t, 25.0, cfg);
    CHECK(std::abs(sol.a_first) < 0.05);
  }
}

TEST_CASE("desired-speed weight accelerates a slow ego") {
  const DriverConstants k{1.2, 5.0, 20.0};
  PlannerConfig cfg;
  const std::vector<double> w{0, 1, 0};
  const auto pred = predict_leader(500.0, 20.0, 3.0, cfg.dt);
  const auto sol = solve_nmpc_step({0.0, 0.0, 12.0, 0.0}, pred, w, kFree, 3.0, k, table(), 25.0, cfg);
  CHECK(sol.a_first > 0.0);
}

TEST_CASE("a stopped leader close ahead is respected") {
  const DriverConstants k{1.2, 5.0, 10.0};
  PlannerConfig cfg;
  const std::vector<double> w{1, 1, 1, 1};
  const auto pred = predict_leader(6.0, 0.0, 3.0, cfg.dt);
  const auto sol = solve_nmpc_step({0.0, 0.0, 1.0, 0.0}, pred, w, kUnsteady, 3.0, k, table(), 15.0, cfg);
  for (std::size_t i = 0; i < sol.states.size(); ++i) {
    CHECK(pred[i].pos - sol.states[i].pos >= k.d_s - 0.1);
  }
  CHECK(sol.gap_violation <= 0.1);
}

TEST_CASE("an unavoidable collision is reported as infeasible") {
  const DriverConstants k{1.2, 5.0, 10.0};
  PlannerConfig cfg;
  const std::vector<double> w{1, 1, 1, 1};
  const auto pred = predict_leader(7.0, 0.0, 2.0, cfg.dt);
  try {
    solve_nmpc_step({0.0, 0.0, 20.0, 0.0}, pred, w, kUnsteady, 2.0, k, table(), 25.0, cfg);
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kInfeasible);
  }
}

TEST_CASE("scaling weights leaves the first action unchanged") {
  const auto d = reference_driver(3.0);
  DriverConstants k = d.constants;
  k.v_d = 20.0;
  PlannerConfig cfg;
  const auto pred = predict_leader(45.0, 18.0, 3.0, cfg.dt);
  auto w = d.weights.at(kSteady);
  const EgoState ego{0.0, 0.0, 16.0, 0.0};
  const auto a = solve_nmpc_step(ego, pred, w, kSteady, 3.0, k, d.table, 25.0, cfg);
  for (auto& x : w) x *= 3.0;
  const auto b = solve_nmpc_step(ego, pred, w, kSteady, 3.0, k, d.table, 25.0, cfg);
  CHECK(std::abs(a.a_first - b.a_first) < 1e-3);
}

TEST_CASE("rollouts are deterministic, kinematically exact and audited clean") {
  const auto model = fixed_model(3.0);
  const auto log = cruise_log(20.0, 35.0, 40.0, 20.0);
  PlannerConfig cfg;
  const auto a = rollout_scenario(log, model, cfg, 11);
  const auto b = rollout_scenario(log, model, cfg, 11);
  std::ostringstream sa, sb;
  write_rollout_csv(sa, a);
  write_rollout_csv(sb, b);
  CHECK(sa.str() == sb.str());
  REQUIRE(a.steps.size() == log.samples.size());
  for (std::size_t i = 0; i + 1 < a.steps.size(); ++i) {
    const auto& s = a.steps[i];
    const auto& n = a.steps[i + 1];
    CHECK(std::abs(n.ego_pos - (s.ego_pos + s.ego_vel * 0.1 + 0.5 * s.ego_acc * 0.01)) < 1e-9);
    CHECK(std::abs(n.ego_vel - (s.ego_vel + s.ego_acc * 0.1)) < 1e-9);
  }
  CHECK(audit_rollout(a).violations == 0);
}

TEST_CASE("closed-loop gap settles toward the steady gap") {
  const auto model = fixed_model(3.0);
  const auto log = cruise_log(20.0, 50.0, 40.0, 20.0);
  PlannerConfig cfg;
  cfg.v_max = 25.0;
  const auto r = rollout_scenario(log, model, cfg, 1);
  const double d_c = 20.0 * model.constants.tau + model.constants.d_s;
  const double start = std::abs(r.steps.front().gap() - d_c);
  const double at30 = std::abs(r.steps[300].gap() - d_c);
  CHECK(r.steps[300].condition == kSteady);
  CHECK(at30 < 0.5 * start);
}

TEST_CASE("stochastic models give distinct rollouts") {
  auto model = fixed_model(3.0);
  model.horizons.support = {2.0, 3.0, 4.0};
  model.horizons.probs = {0.3, 0.4, 0.3};
  auto log = cruise_log(15.0, 40.0, 20.0, 12.0);
  PlannerConfig cfg;
  cfg.acc_noise_std = 0.05;
  const auto a = rollout_scenario(log, model, cfg, 1);
  const auto b = rollout_scenario(log, model, cfg, 2);
  double dist = 0.0;
  for (std::size_t i = 0; i < a.steps.size(); ++i) dist += std::pow(a.steps[i].ego_pos - b.steps[i].ego_pos, 2);
  CHECK(dist > 0.0);
}

TEST_CASE("missing condition fails at inference") {
  const auto d = reference_driver(3.0);
  const auto model = degenerate_model({{kFree, d.weights.at(kFree)}}, 3.0, d.table, d.constants);
  const auto log = cruise_log(20.0, 30.0, 5.0, 20.0);
  try {
    rollout_scenario(log, model, PlannerConfig{}, 1);
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kMissingCondition);
  }
}

TEST_CASE("audit counts gap and speed breaches") {
  Rollout r;
  r.d_s = 5.0;
  r.v_min = 0.0;
  r.v_max = 20.0;
  r.steps.push_back({0.0, 0.0, 10.0, 0.0, 20.0, 10.0});
  r.steps.push_back({0.1, 0.0, 10.0, 0.0, 4.8, 10.0});
  r.steps.push_back({0.2, 0.0, 20.5, 0.0, 40.0, 10.0});
  const auto a = audit_rollout(r);
  CHECK(a.violations == 2);
  CHECK(a.min_gap_margin == doctest::Approx(-0.2));
  CHECK(a.max_speed_excess == doctest::Approx(0.5));
}

TEST_CASE("planner config validation") {
  PlannerConfig cfg;
  cfg.a_min = 5.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  CHECK(parse_resample_policy(to_string(ResamplePolicy::kPerStep)) == ResamplePolicy::kPerStep);
  CHECK_THROWS_AS(parse_resample_policy("sometimes"), Error);
}
