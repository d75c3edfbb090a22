// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rrdm/distribution.hpp"
#include "rrdm/error.hpp"
#include "rrdm/features.hpp"
#include "rrdm/harness.hpp"
#include "rrdm/pipeline.hpp"
#include "rrdm/planner.hpp"
#include "rrdm/trajectory.hpp"

using namespace rrdm;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSeed = 42;

int g_failed = 0;

void report(int id, const char* name, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %d %s: %s\n", pass ? "PASS" : "FAIL", id, name, detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failed;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double pmf_mode(const std::map<double, double>& pmf) {
  return std::max_element(pmf.begin(), pmf.end(), [](const auto& a, const auto& b) {
           return a.second < b.second;
         })->first;
}

std::string pmf_text(const std::map<double, double>& pmf) {
  std::string s;
  for (const auto& [n, p] : pmf) s += fmt("%sP(%g)=%.3f", s.empty() ? "" : " ", n, p);
  return s;
}

// Criterion 1.
void quintic_calculus() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(kSeed);
  std::uniform_real_distribution<double> coeff(-1.0, 1.0), time(0.1, 4.0);
  const double h = 1e-4;
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    QuinticCoeffs c;
    for (auto& y : c.y) y = coeff(rng);
    const double t = time(rng);
    const auto lo = eval_quintic(c, t - h), mid = eval_quintic(c, t), hi = eval_quintic(c, t + h);
    const double vel_fd = (hi.pos - lo.pos) / (2 * h);
    const double acc_fd = (hi.vel - lo.vel) / (2 * h);
    worst = std::max(worst, std::abs(vel_fd - mid.vel) / std::max(1.0, std::abs(mid.vel)));
    worst = std::max(worst, std::abs(acc_fd - mid.acc) / std::max(1.0, std::abs(mid.acc)));
  }
  const double dt = seconds_since(t0);
  report(1, "quintic calculus", worst < 1e-5,
         fmt("1000 sets, max relative error %.2e (< 1e-5), %.3f s", worst, dt));
}

// Criterion 2.
void feature_zeros() {
  const double dt = 0.1;
  std::vector<KinematicPoint> ego;
  std::vector<LeaderPoint> leader;
  const DriverConstants k{1.5, 5.0, 10.0};
  for (int i = 0; i < 40; ++i) {
    const double t = i * dt;
    ego.push_back({10.0 * t, 10.0, 0.0});
    leader.push_back({10.0 * t + 20.0, 10.0});
  }
  const auto f = raw_features(ego, leader, k, dt);
  const double ds = f[static_cast<int>(Feature::kDesiredSpeed)];
  const double rs = f[static_cast<int>(Feature::kRelativeSpeed)];
  const double cd = f[static_cast<int>(Feature::kSteadyGap)];
  report(2, "feature zeros", ds < 1e-12 && rs < 1e-12 && cd < 1e-12,
         fmt("phi_ds=%.1e phi_rs=%.1e phi_cd=%.1e (< 1e-12)", ds, rs, cd));
}

// Criterion 3.
void classifier() {
  const auto t0 = std::chrono::steady_clock::now();
  using C = DrivingCondition;
  bool examples = classify_from_averages(3.0, 0.02, 30.0, 10.0) == C::kSteadyCarFollowing &&
                  classify_from_averages(8.0, -0.01, 40.0, 10.0) == C::kFreeMotion &&
                  classify_from_averages(7.0, 0.01, 30.0, 10.0) == C::kUnsteadyCarFollowing;

  std::mt19937_64 rng(kSeed);
  std::uniform_real_distribution<double> speed(0.0, 30.0), gap(0.5, 150.0), jitter(-2.0, 2.0);
  std::size_t mismatches = 0;
  std::map<C, std::size_t> counts;
  for (int i = 0; i < 10000; ++i) {
    TrajectorySegment seg;
    const double v0 = speed(rng), g0 = gap(rng), vl = speed(rng);
    double sum_thw = 0, sum_ttci = 0, sum_gap = 0, sum_v = 0;
    for (int k = 0; k < 20; ++k) {
      const double v = std::max(0.0, v0 + jitter(rng));
      const double g = std::max(0.5, g0 + jitter(rng));
      const double lv = std::max(0.0, vl + jitter(rng));
      seg.samples.push_back({k * 0.1, g, lv, 0.0, v, 0.0});
      sum_thw += thw(g, v);
      sum_ttci += ttci(v, lv, g);
      sum_gap += g;
      sum_v += v;
    }
    const double m_thw = sum_thw / 20, m_ttci = sum_ttci / 20, m_gap = sum_gap / 20, m_v = sum_v / 20;
    const bool steady = m_thw < 6.0 && m_ttci < 0.05;
    const bool free = m_thw > 6.0 && m_ttci <= 0.0 && m_gap > 35.0 && m_v > 5.0;
    const C expected = steady ? C::kSteadyCarFollowing : free ? C::kFreeMotion : C::kUnsteadyCarFollowing;
    const C got = classify_condition(seg);
    ++counts[got];
    if (got != expected) ++mismatches;
  }
  std::size_t labelled = 0;
  for (const auto& [c, n] : counts) labelled += n;
  const double dt = seconds_since(t0);
  report(3, "condition classifier", examples && mismatches == 0 && labelled == 10000 && dt < 5.0,
         fmt("3 examples %s, 10000 random segments labelled (steady %zu, free %zu, unsteady %zu), "
             "%zu disagree with the threshold rules, %.2f s",
             examples ? "ok" : "WRONG", counts[C::kSteadyCarFollowing], counts[C::kFreeMotion],
             counts[C::kUnsteadyCarFollowing], mismatches, dt));
}

struct TraceCheck {
  std::size_t checked = 0;
  std::size_t bad = 0;
};

// Grad norm at iteration 500 below that at iteration 10. A segment that stops
// earlier contributes its final norm in place of iteration 500.
TraceCheck check_traces(const LearningOutcome& learning) {
  TraceCheck tc;
  for (const auto& s : learning.segments) {
    const auto& trace = s.per_horizon.at(s.best_horizon).grad_trace;
    if (trace.size() < 10) continue;
    ++tc.checked;
    const double late = trace.size() >= 500 ? trace[499] : trace.back();
    if (!(late < trace[9])) ++tc.bad;
  }
  return tc;
}

RecoveryReport recovery(double horizon, int samples) {
  RecoveryConfig rc;
  rc.samples = samples;
  const auto t0 = std::chrono::steady_clock::now();
  auto rep = run_recovery_experiment(reference_driver(horizon), rc, kSeed);
  std::printf("  recovery run N*=%g: %zu segments, %zu rollouts, %.0f s\n", horizon, rep.segments,
              rep.rollouts + rep.rollout_failures, seconds_since(t0));
  return rep;
}

std::size_t g_rollouts = 0, g_violations = 0, g_failures = 0;
double g_min_margin = std::numeric_limits<double>::infinity();
std::vector<double> g_pmf_sums;

void pmf_sums_of(const HorizonDistribution& h) {
  g_pmf_sums.push_back(std::accumulate(h.probs.begin(), h.probs.end(), 0.0));
}

// Criterion 9.
void copula_round_trip(const LearnedDriverModel& model, const LearningOutcome& learning) {
  double worst_tau = 0.0;
  std::size_t outside = 0, pairs = 0;
  Rng rng(derive_seed(kSeed, {9}));
  for (const auto& [c, copula] : model.copulas) {
    const auto& pool = learning.pools.at(c);
    const std::size_t d = copula.dim();
    std::vector<std::vector<double>> train(d), draws(d);
    for (const auto& w : pool) {
      for (std::size_t i = 0; i < d; ++i) train[i].push_back(w[i]);
    }
    for (int k = 0; k < 5000; ++k) {
      const auto w = sample_weights(copula, rng);
      for (std::size_t i = 0; i < d; ++i) {
        draws[i].push_back(w[i]);
        const auto [lo, hi] = std::minmax_element(train[i].begin(), train[i].end());
        if (w[i] < *lo || w[i] > *hi) ++outside;
      }
    }
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = i + 1; j < d; ++j) {
        ++pairs;
        worst_tau = std::max(worst_tau, std::abs(kendall_tau(train[i], train[j]) -
                                                 kendall_tau(draws[i], draws[j])));
      }
    }
  }
  report(9, "copula round-trip", pairs > 0 && worst_tau <= 0.1 && outside == 0,
         fmt("%zu copulas, 5000 draws each, max |tau diff| %.3f over %zu pairs (<= 0.1), "
             "%zu values outside the training range",
             model.copulas.size(), worst_tau, pairs, outside));
}

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    out[fs::relative(e.path(), root).generic_string()] = ss.str();
  }
  return out;
}

// Criterion 10.
void determinism() {
  const auto root = fs::temp_directory_path() / "rrdm_acceptance_determinism";
  fs::remove_all(root);
  RunConfig c;
  c.data_dir = root / "data";
  c.model = root / "model.json";
  c.synth.repeats = 6;
  c.synth.scenarios = {"cruise_20", "stop_go_30", "transient_1.0"};
  c.learner.max_iters = 100;
  c.samples = 4;
  cmd_synth(c);

  std::string models[2];
  std::map<std::string, std::string> samples[2];
  for (int run = 0; run < 2; ++run) {
    RunConfig r = c;
    r.out = root / "learn";
    cmd_learn(r);
    models[run] = read_tree(root).at("model.json");

    r.out = root / "samples";
    fs::remove_all(r.out);
    const auto summary = nlohmann::json::parse(cmd_simulate(r).summary_json);
    samples[run] = read_tree(r.out);
    if (run == 0) {
      // These rollouts also count toward the constraint audit.
      g_rollouts += summary.at("rollouts").get<std::size_t>() + summary.at("failures").get<std::size_t>();
      g_violations += summary.at("violations").get<std::size_t>();
      g_failures += summary.at("failures").get<std::size_t>();
      if (!summary.at("min_gap_margin").is_null()) {
        g_min_margin = std::min(g_min_margin, summary.at("min_gap_margin").get<double>());
      }
    }
  }
  std::size_t files = 0;
  for (const auto& [name, bytes] : samples[0]) {
    if (name.find("sample_") != std::string::npos) ++files;
  }
  const bool same_model = models[0] == models[1];
  const bool same_samples = samples[0] == samples[1];
  report(10, "determinism", same_model && same_samples && files == 12,
         fmt("model file %s, %zu sample CSVs and manifest %s across reruns",
             same_model ? "byte-identical" : "DIFFERS", files, same_samples ? "byte-identical" : "DIFFER"));
}

}  // namespace

int main() {
  std::printf("acceptance suite, master seed %llu\n", static_cast<unsigned long long>(kSeed));
  quintic_calculus();
  feature_zeros();
  classifier();

  const auto rep3 = recovery(3.0, 50);
  const auto rep2 = recovery(2.0, 0);
  const auto rep4 = recovery(4.0, 0);

  {
    const auto tc = check_traces(rep3.learning);
    report(4, "convergence", rep3.converged_fraction >= 0.9 && tc.bad == 0,
           fmt("%.1f%% of %zu segments below 1e-3 (>= 90%%), median %.0f iterations, "
               "grad norm at 500 < at 10 in %zu/%zu traces",
               100.0 * rep3.converged_fraction, rep3.segments, rep3.median_iterations,
               tc.checked - tc.bad, tc.checked));
  }
  {
    const bool tracks = pmf_mode(rep3.pmf) == 3.0 && pmf_mode(rep2.pmf) == 2.0 && pmf_mode(rep4.pmf) == 4.0;
    report(5, "horizon recovery", rep3.horizon_recovery >= 0.7 && tracks,
           fmt("N*=3 recovered in %.1f%% of segments (>= 70%%); modes N*=2: %g, N*=3: %g, N*=4: %g "
               "[%s | %s | %s]",
               100.0 * rep3.horizon_recovery, pmf_mode(rep2.pmf), pmf_mode(rep3.pmf),
               pmf_mode(rep4.pmf), pmf_text(rep2.pmf).c_str(), pmf_text(rep3.pmf).c_str(),
               pmf_text(rep4.pmf).c_str()));
  }
  {
    bool ok = rep3.conditions.size() == 3;
    std::string detail;
    for (const auto& [c, cr] : rep3.conditions) {
      ok = ok && cr.cosine >= 0.8;
      detail += fmt("%s%s %.3f (pool %zu)", detail.empty() ? "" : ", ", std::string(to_string(c)).c_str(),
                    cr.cosine, cr.pool_size);
    }
    report(6, "weight recovery", ok, "cosine " + detail + " (>= 0.8)");
  }
  {
    const bool ok = rep3.rollouts > 0 && rep3.heldout_rmse.speed <= 1.5 && rep3.heldout_rmse.acc <= 0.6;
    report(7, "closed-loop fidelity", ok,
           fmt("speed RMSE %.3f m/s (<= 1.5), acceleration RMSE %.3f m/s^2 (<= 0.6), "
               "mean of 50 rollouts on each of %zu held-out logs",
               rep3.heldout_rmse.speed, rep3.heldout_rmse.acc, (rep3.rollouts + rep3.rollout_failures) / 50));
  }

  g_rollouts += rep3.rollouts + rep3.rollout_failures;
  g_violations += rep3.constraint_violations;
  g_failures += rep3.rollout_failures;
  const std::string first_failure = rep3.first_failure;
  if (rep3.rollouts > 0) g_min_margin = std::min(g_min_margin, rep3.min_gap_margin);

  copula_round_trip(rep3.model, rep3.learning);
  determinism();

  report(8, "constraint audit", g_violations == 0 && g_failures == 0,
         fmt("%zu rollouts, %zu with violations, %zu aborted by the planner, min gap - d_s = %.3f m",
             g_rollouts, g_violations, g_failures, g_min_margin) +
             (first_failure.empty() ? "" : "; first abort: " + first_failure));

  {
    for (const auto* r : {&rep2, &rep3, &rep4}) {
      pmf_sums_of(r->model.horizons);
      double s = 0.0;
      for (const auto& [n, p] : r->pmf) s += p;
      g_pmf_sums.push_back(s);
    }
    double worst_sum = 0.0;
    for (double s : g_pmf_sums) worst_sum = std::max(worst_sum, std::abs(s - 1.0));

    const auto& model = rep3.model;
    PlannerConfig cfg;
    std::mt19937_64 rng(derive_seed(kSeed, {11}));
    std::uniform_real_distribution<double> u(0.0, 3.0);
    std::bernoulli_distribution zero(0.15);
    double worst_a = 0.0;
    for (int i = 0; i < 100; ++i) {
      std::vector<double> w(4);
      for (auto& x : w) x = zero(rng) ? 0.0 : u(rng);
      if (std::all_of(w.begin(), w.end(), [](double x) { return x == 0.0; })) w[1] = 1.0;
      const double v = 8.0 + 0.15 * i;
      DriverConstants k = model.constants;
      k.v_d = v;
      const double d_c = v * k.tau + k.d_s;
      const auto pred = predict_leader(d_c, v, 3.0, cfg.dt);
      const auto sol = solve_nmpc_step({0.0, 0.0, v, 0.0}, pred, w, DrivingCondition::kSteadyCarFollowing,
                                       3.0, k, model.normalization, v + 5.0, cfg);
      worst_a = std::max(worst_a, std::abs(sol.a_first));
    }
    report(11, "PMF sanity and planner equilibrium", worst_sum <= 1e-12 && worst_a < 0.05,
           fmt("%zu PMFs, max |sum - 1| %.1e (<= 1e-12); 100 random steady W, max |a_first| %.2e (< 0.05)",
               g_pmf_sums.size(), worst_sum, worst_a));
  }

  std::printf("%d criteria failed\n", g_failed);
  return g_failed == 0 ? 0 : 1;
}
