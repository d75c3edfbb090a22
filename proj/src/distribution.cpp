#include "rrdm/distribution.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <nlohmann/json.hpp>

#include "rrdm/error.hpp"
#include "rrdm/irl.hpp"

namespace rrdm {
namespace {

using nlohmann::json;

// Keeps the likelihood finite for rank-deficient correlation matrices.
constexpr double kLikelihoodRidge = 1e-6;
constexpr double kUniformClamp = 1e-12;

double t_log_density_1d(double x, double nu) {
  return std::lgamma((nu + 1.0) / 2.0) - std::lgamma(nu / 2.0) -
         0.5 * std::log(nu * std::numbers::pi) - (nu + 1.0) / 2.0 * std::log1p(x * x / nu);
}

double copula_log_likelihood(const std::vector<Eigen::VectorXd>& u_rows, const Eigen::MatrixXd& r,
                             double nu) {
  const auto d = static_cast<double>(r.rows());
  Eigen::LLT<Eigen::MatrixXd> llt(r);
  const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  boost::math::students_t dist(nu);
  const double norm = std::lgamma((nu + d) / 2.0) - std::lgamma(nu / 2.0) -
                      d / 2.0 * std::log(nu * std::numbers::pi) - 0.5 * log_det;
  double total = 0.0;
  Eigen::VectorXd x(r.rows());
  for (const auto& u : u_rows) {
    double marg = 0.0;
    for (Eigen::Index j = 0; j < x.size(); ++j) {
      x[j] = boost::math::quantile(dist, u[j]);
      marg += t_log_density_1d(x[j], nu);
    }
    const double q = x.dot(llt.solve(x));
    total += norm - (nu + d) / 2.0 * std::log1p(q / nu) - marg;
  }
  return total;
}

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j, std::size_t dim) {
  if (!j.is_array() || j.size() != dim) fail(ErrorKind::kSchema, "correlation has the wrong shape");
  Eigen::MatrixXd m(dim, dim);
  for (std::size_t i = 0; i < dim; ++i) {
    if (!j[i].is_array() || j[i].size() != dim) {
      fail(ErrorKind::kSchema, "correlation has the wrong shape");
    }
    for (std::size_t k = 0; k < dim; ++k) m(i, k) = j[i][k].get<double>();
  }
  return m;
}

}  // namespace

double CopulaModel::marginal_quantile(std::size_t d, double u) const {
  const auto& v = marginals.at(d);
  const std::size_t n = v.size();
  if (n == 1) return v.front();
  // Order statistic k (1-based) sits at u = k / (n + 1).
  const double pos = std::clamp(u * static_cast<double>(n + 1), 1.0, static_cast<double>(n));
  const auto lo = static_cast<std::size_t>(std::floor(pos)) - 1;
  const std::size_t hi = std::min(lo + 1, n - 1);
  const double frac = pos - std::floor(pos);
  return std::clamp(v[lo] + frac * (v[hi] - v[lo]), v.front(), v.back());
}

void CopulaModel::validate() const {
  const auto d = static_cast<Eigen::Index>(dim());
  if (d == 0) fail(ErrorKind::kSchema, "copula has no dimensions");
  if (correlation.rows() != d || correlation.cols() != d) {
    fail(ErrorKind::kSchema, "copula correlation does not match its dimension");
  }
  if (!(dof >= 1.0)) fail(ErrorKind::kSchema, "copula degrees of freedom must be >= 1");
  if (point_mass.size() != dim()) fail(ErrorKind::kSchema, "point-mass flags do not match");
  for (Eigen::Index i = 0; i < d; ++i) {
    if (correlation(i, i) != 1.0) fail(ErrorKind::kSchema, "correlation diagonal must be 1");
    for (Eigen::Index j = 0; j < d; ++j) {
      if (std::abs(correlation(i, j) - correlation(j, i)) > 1e-12) {
        fail(ErrorKind::kSchema, "correlation must be symmetric");
      }
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(correlation);
  if (es.eigenvalues().minCoeff() < -1e-10) {
    fail(ErrorKind::kSchema, "correlation is not positive semi-definite");
  }
  for (const auto& m : marginals) {
    if (m.empty() || !std::is_sorted(m.begin(), m.end())) {
      fail(ErrorKind::kSchema, "marginal must be a non-empty sorted sample");
    }
  }
}

double kendall_tau(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorKind::kInvalidArgument, "kendall_tau length mismatch");
  const std::size_t n = x.size();
  long long concordant = 0, discordant = 0, ties_x = 0, ties_y = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = x[j] - x[i];
      const double dy = y[j] - y[i];
      if (dx == 0.0 && dy == 0.0) continue;
      if (dx == 0.0) {
        ++ties_x;
      } else if (dy == 0.0) {
        ++ties_y;
      } else if ((dx > 0.0) == (dy > 0.0)) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  }
  const double nx = static_cast<double>(concordant + discordant + ties_y);
  const double ny = static_cast<double>(concordant + discordant + ties_x);
  if (nx == 0.0 || ny == 0.0) return 0.0;
  return static_cast<double>(concordant - discordant) / std::sqrt(nx * ny);
}

std::vector<double> pseudo_observations(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> u(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) u[order[k]] = rank / static_cast<double>(n + 1);
    i = j + 1;
  }
  return u;
}

Eigen::MatrixXd project_to_correlation(const Eigen::MatrixXd& m) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  Eigen::VectorXd lambda = es.eigenvalues().cwiseMax(0.0);
  Eigen::MatrixXd p = es.eigenvectors() * lambda.asDiagonal() * es.eigenvectors().transpose();
  const Eigen::Index d = p.rows();
  Eigen::VectorXd s(d);
  for (Eigen::Index i = 0; i < d; ++i) s[i] = p(i, i) > 0.0 ? 1.0 / std::sqrt(p(i, i)) : 0.0;
  Eigen::MatrixXd c = s.asDiagonal() * p * s.asDiagonal();
  for (Eigen::Index i = 0; i < d; ++i) {
    c(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < d; ++j) {
      const double v = std::clamp(0.5 * (c(i, j) + c(j, i)), -1.0, 1.0);
      c(i, j) = c(j, i) = v;
    }
  }
  return c;
}

CopulaModel fit_t_copula(const std::vector<std::vector<double>>& pool, DrivingCondition condition) {
  if (pool.empty()) fail(ErrorKind::kInvalidArgument, "empty weight pool");
  const std::size_t dim = pool.front().size();
  if (dim == 0) fail(ErrorKind::kInvalidArgument, "weight vectors are empty");
  if (pool.size() < dim + 2) {
    fail(ErrorKind::kInvalidArgument,
         "weight pool for '" + std::string(to_string(condition)) + "' has " +
             std::to_string(pool.size()) + " vectors; at least " + std::to_string(dim + 2) +
             " are needed");
  }
  for (const auto& w : pool) {
    if (w.size() != dim) fail(ErrorKind::kInvalidArgument, "weight vectors differ in size");
    for (double v : w) {
      if (!std::isfinite(v)) fail(ErrorKind::kInvalidArgument, "non-finite weight in pool");
    }
  }

  CopulaModel model;
  model.condition = condition;
  std::vector<std::vector<double>> columns(dim, std::vector<double>(pool.size()));
  for (std::size_t k = 0; k < pool.size(); ++k) {
    for (std::size_t d = 0; d < dim; ++d) columns[d][k] = pool[k][d];
  }
  model.marginals = columns;
  model.point_mass.resize(dim);
  for (std::size_t d = 0; d < dim; ++d) {
    std::sort(model.marginals[d].begin(), model.marginals[d].end());
    model.point_mass[d] = model.marginals[d].front() == model.marginals[d].back();
    if (model.point_mass[d]) model.marginals[d] = {model.marginals[d].front()};
  }

  Eigen::MatrixXd rho = Eigen::MatrixXd::Identity(dim, dim);
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = i + 1; j < dim; ++j) {
      const double tau = kendall_tau(columns[i], columns[j]);
      rho(i, j) = rho(j, i) = std::sin(std::numbers::pi * tau / 2.0);
    }
  }
  model.correlation = project_to_correlation(rho);

  std::vector<std::vector<double>> u_cols(dim);
  for (std::size_t d = 0; d < dim; ++d) u_cols[d] = pseudo_observations(columns[d]);
  std::vector<Eigen::VectorXd> u_rows(pool.size(), Eigen::VectorXd(dim));
  for (std::size_t k = 0; k < pool.size(); ++k) {
    for (std::size_t d = 0; d < dim; ++d) {
      u_rows[k][d] = std::clamp(u_cols[d][k], kUniformClamp, 1.0 - kUniformClamp);
    }
  }
  const Eigen::MatrixXd r_lik = (1.0 - kLikelihoodRidge) * model.correlation +
                                kLikelihoodRidge * Eigen::MatrixXd::Identity(dim, dim);
  double best = -std::numeric_limits<double>::infinity();
  for (int nu = 1; nu <= kMaxCopulaDof; ++nu) {
    const double ll = copula_log_likelihood(u_rows, r_lik, nu);
    if (ll > best) {
      best = ll;
      model.dof = nu;
    }
  }
  return model;
}

std::vector<double> sample_weights(const CopulaModel& model, Rng& rng) {
  const auto d = static_cast<Eigen::Index>(model.dim());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(model.correlation);
  const Eigen::MatrixXd root =
      es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
  std::normal_distribution<double> normal(0.0, 1.0);
  std::gamma_distribution<double> gamma(model.dof / 2.0, 2.0);
  Eigen::VectorXd z(d);
  for (Eigen::Index i = 0; i < d; ++i) z[i] = normal(rng);
  const double chi2 = gamma(rng);
  const Eigen::VectorXd x = root * z / std::sqrt(chi2 / model.dof);
  boost::math::students_t dist(model.dof);
  std::vector<double> w(model.dim());
  for (Eigen::Index i = 0; i < d; ++i) {
    const double u = std::clamp(boost::math::cdf(dist, x[i]), 0.0, 1.0);
    w[i] = std::max(0.0, model.marginal_quantile(i, u));
  }
  return w;
}

void HorizonDistribution::validate() const {
  if (support.empty() || support.size() != probs.size()) {
    fail(ErrorKind::kSchema, "horizon distribution support and probabilities differ in length");
  }
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) fail(ErrorKind::kSchema, "negative horizon probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-12) fail(ErrorKind::kSchema, "horizon probabilities do not sum to 1");
}

HorizonDistribution fit_horizon_distribution(const std::map<double, std::size_t>& counts,
                                             std::span<const double> support) {
  HorizonDistribution pn;
  pn.support.assign(support.begin(), support.end());
  std::sort(pn.support.begin(), pn.support.end());
  std::size_t total = 0;
  for (const auto& [n, c] : counts) {
    if (std::find(pn.support.begin(), pn.support.end(), n) == pn.support.end()) {
      fail(ErrorKind::kInvalidArgument, "horizon count outside the candidate set");
    }
    total += c;
  }
  if (total == 0) fail(ErrorKind::kInvalidArgument, "all horizon counts are zero");
  pn.probs.resize(pn.support.size(), 0.0);
  for (std::size_t i = 0; i < pn.support.size(); ++i) {
    auto it = counts.find(pn.support[i]);
    if (it != counts.end()) {
      pn.probs[i] = static_cast<double>(it->second) / static_cast<double>(total);
    }
  }
  return pn;
}

double sample_horizon(const HorizonDistribution& pn, Rng& rng) {
  std::discrete_distribution<std::size_t> pick(pn.probs.begin(), pn.probs.end());
  return pn.support[pick(rng)];
}

const CopulaModel& LearnedDriverModel::copula(DrivingCondition c) const {
  auto it = copulas.find(c);
  if (it == copulas.end()) {
    fail(ErrorKind::kMissingCondition,
         "model has no weight distribution for condition '" + std::string(to_string(c)) + "'");
  }
  return it->second;
}

const HorizonDistribution& LearnedDriverModel::horizons_for(DrivingCondition c) const {
  auto it = condition_horizons.find(c);
  return it == condition_horizons.end() ? horizons : it->second;
}

LearnedDriverModel fit_driver_model(const LearningOutcome& outcome,
                                    std::span<const double> horizons,
                                    const std::string& provenance_json,
                                    bool per_condition_horizons) {
  LearnedDriverModel model;
  model.normalization = outcome.table;
  model.constants = outcome.constants;
  model.provenance_json = provenance_json;
  for (auto c : kAllConditions) {
    auto it = outcome.pools.find(c);
    const std::size_t dim = active_features(c).size();
    if (it == outcome.pools.end() || it->second.empty()) {
      model.warnings.push_back("no training segments for condition '" +
                               std::string(to_string(c)) + "'");
      continue;
    }
    if (it->second.size() < dim + 2) {
      model.warnings.push_back("condition '" + std::string(to_string(c)) + "' has only " +
                               std::to_string(it->second.size()) + " segments; need " +
                               std::to_string(dim + 2));
      continue;
    }
    model.copulas[c] = fit_t_copula(it->second, c);
  }
  model.horizons = fit_horizon_distribution(outcome.horizon_counts, horizons);
  if (per_condition_horizons) {
    for (const auto& [c, counts] : outcome.condition_horizon_counts) {
      model.condition_horizons[c] = fit_horizon_distribution(counts, horizons);
    }
  }
  return model;
}

LearnedDriverModel degenerate_model(const std::map<DrivingCondition, std::vector<double>>& weights,
                                    double horizon, const NormalizationTable& table,
                                    const DriverConstants& constants) {
  LearnedDriverModel model;
  model.normalization = table;
  model.constants = constants;
  for (const auto& [c, w] : weights) {
    CopulaModel cm;
    cm.condition = c;
    cm.correlation = Eigen::MatrixXd::Identity(w.size(), w.size());
    cm.dof = kMaxCopulaDof;
    for (double v : w) cm.marginals.push_back({v});
    cm.point_mass.assign(w.size(), true);
    model.copulas[c] = std::move(cm);
  }
  model.horizons.support = {horizon};
  model.horizons.probs = {1.0};
  return model;
}

std::string model_to_json(const LearnedDriverModel& model) {
  json j;
  j["version"] = kModelVersion;
  j["constants"] = {{"tau", model.constants.tau},
                    {"d_s", model.constants.d_s},
                    {"v_d", model.constants.v_d}};
  json norm = json::object();
  for (const auto& [c, ranges] : model.normalization.ranges) {
    json arr = json::array();
    for (const auto& r : ranges) arr.push_back({{"min", r.min}, {"max", r.max}});
    norm[std::string(to_string(c))] = std::move(arr);
  }
  j["normalization"] = std::move(norm);
  json cop = json::object();
  for (const auto& [c, m] : model.copulas) {
    cop[std::string(to_string(c))] = {{"correlation", matrix_to_json(m.correlation)},
                                      {"dof", m.dof},
                                      {"marginals", m.marginals},
                                      {"point_mass", m.point_mass}};
  }
  j["copulas"] = std::move(cop);
  j["P_N"] = {{"support", model.horizons.support}, {"probs", model.horizons.probs}};
  if (!model.condition_horizons.empty()) {
    json by = json::object();
    for (const auto& [c, h] : model.condition_horizons) {
      by[std::string(to_string(c))] = {{"support", h.support}, {"probs", h.probs}};
    }
    j["P_N_by_condition"] = std::move(by);
  }
  j["provenance"] = json::parse(model.provenance_json);
  return j.dump(2) + "\n";
}

LearnedDriverModel model_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::kSchema, std::string("model file is not valid JSON: ") + e.what());
  }
  LearnedDriverModel model;
  try {
    if (!j.contains("version")) fail(ErrorKind::kSchema, "model file has no version");
    const int version = j.at("version").get<int>();
    if (version != kModelVersion) {
      fail(ErrorKind::kSchema, "model version " + std::to_string(version) +
                                   " is not supported (expected " +
                                   std::to_string(kModelVersion) + ")");
    }
    const auto& k = j.at("constants");
    model.constants = {k.at("tau").get<double>(), k.at("d_s").get<double>(),
                       k.at("v_d").get<double>()};
    for (const auto& [name, arr] : j.at("normalization").items()) {
      const auto c = parse_condition(name);
      std::vector<FeatureRange> ranges;
      for (const auto& r : arr) ranges.push_back({r.at("min").get<double>(), r.at("max").get<double>()});
      if (ranges.size() != active_features(c).size()) {
        fail(ErrorKind::kSchema, "normalization for '" + name + "' has the wrong dimension");
      }
      model.normalization.ranges[c] = std::move(ranges);
    }
    for (const auto& [name, cj] : j.at("copulas").items()) {
      CopulaModel m;
      m.condition = parse_condition(name);
      m.marginals = cj.at("marginals").get<std::vector<std::vector<double>>>();
      m.point_mass = cj.at("point_mass").get<std::vector<bool>>();
      m.dof = cj.at("dof").get<double>();
      m.correlation = matrix_from_json(cj.at("correlation"), m.marginals.size());
      if (m.dim() != active_features(m.condition).size()) {
        fail(ErrorKind::kSchema, "copula for '" + name + "' has the wrong dimension");
      }
      m.validate();
      model.copulas[m.condition] = std::move(m);
    }
    model.horizons.support = j.at("P_N").at("support").get<std::vector<double>>();
    model.horizons.probs = j.at("P_N").at("probs").get<std::vector<double>>();
    model.horizons.validate();
    if (j.contains("P_N_by_condition")) {
      for (const auto& [name, hj] : j.at("P_N_by_condition").items()) {
        HorizonDistribution h;
        h.support = hj.at("support").get<std::vector<double>>();
        h.probs = hj.at("probs").get<std::vector<double>>();
        h.validate();
        model.condition_horizons[parse_condition(name)] = std::move(h);
      }
    }
    model.provenance_json = j.at("provenance").dump();
  } catch (const json::exception& e) {
    fail(ErrorKind::kSchema, std::string("model file is malformed: ") + e.what());
  }
  for (auto c : kAllConditions) {
    if (!model.copulas.count(c)) {
      model.warnings.push_back("no weight distribution for condition '" +
                               std::string(to_string(c)) + "'");
    }
  }
  return model;
}

void save_model(const LearnedDriverModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write model file " + path.string());
  out << model_to_json(model);
  if (!out) fail(ErrorKind::kIo, "failed writing model file " + path.string());
}

LearnedDriverModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot read model file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return model_from_json(ss.str());
}

bool operator==(const CopulaModel& a, const CopulaModel& b) {
  return a.condition == b.condition && a.dof == b.dof && a.marginals == b.marginals &&
         a.point_mass == b.point_mass && a.correlation.rows() == b.correlation.rows() &&
         a.correlation.cols() == b.correlation.cols() && a.correlation == b.correlation;
}

bool operator==(const HorizonDistribution& a, const HorizonDistribution& b) {
  return a.support == b.support && a.probs == b.probs;
}

bool operator==(const LearnedDriverModel& a, const LearnedDriverModel& b) {
  auto same_table = [](const NormalizationTable& x, const NormalizationTable& y) {
    if (x.ranges.size() != y.ranges.size()) return false;
    for (const auto& [c, r] : x.ranges) {
      auto it = y.ranges.find(c);
      if (it == y.ranges.end() || it->second.size() != r.size()) return false;
      for (std::size_t i = 0; i < r.size(); ++i) {
        if (r[i].min != it->second[i].min || r[i].max != it->second[i].max) return false;
      }
    }
    return true;
  };
  return a.copulas == b.copulas && a.horizons == b.horizons &&
         a.condition_horizons == b.condition_horizons &&
         same_table(a.normalization, b.normalization) && a.constants.tau == b.constants.tau &&
         a.constants.d_s == b.constants.d_s && a.constants.v_d == b.constants.v_d &&
         json::parse(a.provenance_json) == json::parse(b.provenance_json);
}

}  // namespace rrdm
