#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "rrdm/error.hpp"
#include "rrdm/harness.hpp"

using namespace rrdm;

namespace {

std::vector<LeaderScenario> only(std::initializer_list<const char*> ids) {
  std::vector<LeaderScenario> out;
  for (auto& s : builtin_scenarios()) {
    for (const char* id : ids) {
      if (s.id == id) out.push_back(s);
    }
  }
  return out;
}

double distance(const LeaderFollowerLog& a, const LeaderFollowerLog& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.samples.size(); ++i) d += std::abs(a.samples[i].ego_pos - b.samples[i].ego_pos);
  return d;
}

}  // namespace

TEST_CASE("built-in scenarios") {
  const auto all = builtin_scenarios();
  CHECK(all.size() == 9);
  std::set<std::string> ids;
  for (const auto& s : all) {
    ids.insert(s.id);
    CHECK(s.duration == 120.0);
    CHECK(s.knots.front().t == 0.0);
    CHECK(s.knots.back().t == doctest::Approx(s.duration));
  }
  CHECK(ids.size() == 9);

  const auto cruise = only({"cruise_20"}).front();
  for (double t : {0.0, 13.7, 59.9, 120.0}) CHECK(cruise.speed(t) == 20.0);
  CHECK(cruise.distance(10.0) == doctest::Approx(200.0));

  for (const auto& s : only({"stop_go_20", "stop_go_30", "stop_go_40"})) {
    double lo = 1e9, prev = s.speed(0.0);
    for (double t = 0.0; t <= 120.0; t += 0.05) {
      const double v = s.speed(t);
      lo = std::min(lo, v);
      CHECK(std::abs(v - prev) < 0.2);
      CHECK(v <= 10.0);
      prev = v;
    }
    CHECK(lo == doctest::Approx(0.0));
  }
  for (const auto& s : only({"transient_0.5", "transient_1.0", "transient_2.0"})) {
    double hi = 0.0;
    for (double t = 0.0; t <= 120.0; t += 0.1) hi = std::max(hi, s.speed(t));
    CHECK(hi == doctest::Approx(25.0));
    CHECK(s.speed(0.0) == 10.0);
    CHECK(s.speed(120.0) == 12.0);
  }
}

TEST_CASE("leader track integrates the speed profile") {
  const auto s = only({"transient_1.0"}).front();
  const auto track = leader_track(s);
  REQUIRE(track.size() == 1201);
  for (std::size_t i = 1; i < track.size(); ++i) {
    const double trapezoid = 0.5 * (track[i].leader_vel + track[i - 1].leader_vel) * 0.1;
    CHECK(track[i].leader_pos - track[i - 1].leader_pos == doctest::Approx(trapezoid).epsilon(1e-6));
  }
}

TEST_CASE("demos are deterministic, valid and differ only with noise") {
  auto driver = reference_driver(3.0);
  const auto scenarios = only({"cruise_15", "stop_go_40"});
  const auto a = generate_synthetic_demos(driver, scenarios, 2, 9);
  const auto b = generate_synthetic_demos(driver, scenarios, 2, 9);
  REQUIRE(a.size() == 4);
  CHECK(a[0].scenario_id == "cruise_15");
  CHECK(a[2].scenario_id == "stop_go_40");
  for (std::size_t i = 0; i < a.size(); ++i) {
    std::ostringstream sa, sb;
    write_log_csv(sa, a[i]);
    write_log_csv(sb, b[i]);
    CHECK(sa.str() == sb.str());
    std::istringstream in(sa.str());
    CHECK_NOTHROW(load_log(in, a[i].rate_hz, a[i].v_d));
  }
  CHECK(distance(a[0], a[1]) == 0.0);

  driver.noise_std = 0.1;
  const auto noisy = generate_synthetic_demos(driver, scenarios, 2, 9);
  CHECK(distance(noisy[0], noisy[1]) > 0.0);
}

TEST_CASE("receding-horizon demos stay valid") {
  auto driver = reference_driver(3.0);
  driver.mode = DemoMode::kRecedingHorizon;
  const auto logs = generate_synthetic_demos(driver, only({"cruise_20"}), 1, 1);
  REQUIRE(logs.size() == 1);
  CHECK(logs[0].samples.size() == 1201);
}

TEST_CASE("rmse examples and symmetry") {
  std::vector<TrajectoryPoint> a, b, c;
  for (int i = 0; i < 50; ++i) {
    const double t = i * 0.1;
    a.push_back({t, 10.0 + std::sin(t), std::cos(t)});
    b.push_back({t, 11.0 + std::sin(t), std::cos(t)});
    c.push_back({t, 9.0 + t, 0.3});
  }
  const auto zero = rmse(a, a);
  CHECK(zero.speed == 0.0);
  CHECK(zero.acc == 0.0);
  const auto off = rmse(a, b);
  CHECK(off.speed == doctest::Approx(1.0));
  CHECK(off.acc == 0.0);
  CHECK(rmse(a, c).speed == rmse(c, a).speed);
  CHECK(rmse(a, c).acc == rmse(c, a).acc);
  b.pop_back();
  CHECK_THROWS_AS(rmse(a, b), Error);
}

TEST_CASE("mean trajectory is pointwise") {
  const std::vector<std::vector<TrajectoryPoint>> runs{{{0, 1, 2}, {0.1, 3, 4}}, {{0, 3, 0}, {0.1, 5, 0}}};
  const auto m = mean_trajectory(runs);
  CHECK(m[0].vel == 2.0);
  CHECK(m[1].vel == 4.0);
  CHECK(m[1].acc == 2.0);
}

TEST_CASE("per-scenario split honors the fraction and the seed") {
  std::vector<std::string> ids;
  for (const char* s : {"a", "b", "c"}) {
    for (int r = 0; r < 30; ++r) ids.push_back(s);
  }
  const auto split = split_indices(ids, 5.0 / 30.0, 42);
  CHECK(split.train.size() == 75);
  CHECK(split.test.size() == 15);
  std::map<std::string, int> per;
  for (auto i : split.test) ++per[ids[i]];
  for (const auto& [k, n] : per) CHECK(n == 5);
  std::set<std::size_t> seen(split.train.begin(), split.train.end());
  seen.insert(split.test.begin(), split.test.end());
  CHECK(seen.size() == 90);

  const auto again = split_indices(ids, 5.0 / 30.0, 42);
  CHECK(again.test == split.test);
  const auto other = split_indices(ids, 5.0 / 30.0, 43);
  CHECK(other.test != split.test);
  CHECK_THROWS_AS(split_indices(ids, 1.0, 1), Error);
}

TEST_CASE("seed derivation is stable and path-sensitive") {
  CHECK(derive_seed(42, {1, 2}) == derive_seed(42, {1, 2}));
  CHECK(derive_seed(42, {1, 2}) != derive_seed(42, {2, 1}));
  CHECK(derive_seed(42, {1}) != derive_seed(43, {1}));
}

TEST_CASE("cosine and weight rescaling") {
  const std::vector<double> a{1, 0, 0}, b{2, 0, 0}, c{0, 1, 0};
  CHECK(cosine_similarity(a, b) == doctest::Approx(1.0));
  CHECK(cosine_similarity(a, c) == 0.0);
  NormalizationTable from, to;
  from.ranges[DrivingCondition::kFreeMotion] = {{0, 1}, {0, 2}, {0, 4}};
  to.ranges[DrivingCondition::kFreeMotion] = {{0, 2}, {0, 2}, {0, 1}};
  const std::vector<double> w{1, 1, 1};
  CHECK(rescale_weights(w, DrivingCondition::kFreeMotion, from, to) == std::vector<double>{2, 1, 0.25});
}

TEST_CASE("reference driver validates and rejects bad settings") {
  auto d = reference_driver(3.0);
  CHECK_NOTHROW(d.validate());
  d.noise_std = -1.0;
  CHECK_THROWS_AS(d.validate(), Error);
  d = reference_driver(5.0);
  CHECK_THROWS_AS(d.validate(), Error);
}

TEST_CASE("recovery experiment without replay on a small corpus") {
  RecoveryConfig rc;
  rc.repeats = 2;
  rc.samples = 0;
  rc.scenario_ids = {"cruise_20"};
  rc.learner.max_iters = 40;
  const auto r = run_recovery_experiment(reference_driver(3.0), rc, 5);
  CHECK(r.segments == 10);
  double total = 0.0;
  for (const auto& [n, p] : r.pmf) total += p;
  CHECK(std::abs(total - 1.0) < 1e-12);
  CHECK(r.rollouts == 0);
  CHECK(r.horizon_recovery >= 0.0);
  CHECK(r.horizon_recovery <= 1.0);
}
