#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rrdm/features.hpp"

namespace rrdm {

using Rng = std::mt19937_64;

/// t-copula over weight vectors with empirical marginals.
struct CopulaModel {
  DrivingCondition condition = DrivingCondition::kSteadyCarFollowing;
  Eigen::MatrixXd correlation;
  double dof = 4.0;
  std::vector<std::vector<double>> marginals;  // sorted training values per dimension
  std::vector<bool> point_mass;                // dimension was constant in the pool

  std::size_t dim() const { return marginals.size(); }
  /// Inverse of the interpolated empirical CDF; stays inside [min, max].
  double marginal_quantile(std::size_t d, double u) const;
  void validate() const;
};

/// Kendall's tau-b; 0 when either argument is constant.
double kendall_tau(std::span<const double> x, std::span<const double> y);

/// Ranks scaled into (0, 1) as rank / (n + 1), ties averaged.
std::vector<double> pseudo_observations(std::span<const double> x);

/// Symmetric matrix with unit diagonal -> nearest PSD correlation matrix by
/// eigenvalue clipping and diagonal rescaling.
Eigen::MatrixXd project_to_correlation(const Eigen::MatrixXd& m);

inline constexpr int kMaxCopulaDof = 30;

CopulaModel fit_t_copula(const std::vector<std::vector<double>>& pool, DrivingCondition condition);

std::vector<double> sample_weights(const CopulaModel& model, Rng& rng);

struct HorizonDistribution {
  std::vector<double> support;  // seconds, ascending
  std::vector<double> probs;

  void validate() const;
};

HorizonDistribution fit_horizon_distribution(const std::map<double, std::size_t>& counts,
                                             std::span<const double> support);

double sample_horizon(const HorizonDistribution& pn, Rng& rng);

inline constexpr int kModelVersion = 1;

struct LearnedDriverModel {
  std::map<DrivingCondition, CopulaModel> copulas;
  HorizonDistribution horizons;
  std::map<DrivingCondition, HorizonDistribution> condition_horizons;  // optional grouping
  NormalizationTable normalization;
  DriverConstants constants;
  std::string provenance_json = "{}";  // config snapshot and corpus hash
  std::vector<std::string> warnings;   // e.g. conditions without a copula

  /// Throws kMissingCondition when the condition was never trained.
  const CopulaModel& copula(DrivingCondition c) const;
  /// The condition's own P_N when grouped, else the global one.
  const HorizonDistribution& horizons_for(DrivingCondition c) const;
};

struct LearningOutcome;

/// Fits a copula per condition pool and P_N from the horizon counts. Pools
/// smaller than dim + 2 are left out with a warning. With
/// `per_condition_horizons` each condition also gets its own P_N.
LearnedDriverModel fit_driver_model(const LearningOutcome& outcome,
                                    std::span<const double> horizons,
                                    const std::string& provenance_json = "{}",
                                    bool per_condition_horizons = false);

/// A model that always yields the given weights and horizon.
LearnedDriverModel degenerate_model(const std::map<DrivingCondition, std::vector<double>>& weights,
                                    double horizon, const NormalizationTable& table,
                                    const DriverConstants& constants);

std::string model_to_json(const LearnedDriverModel& model);
LearnedDriverModel model_from_json(const std::string& text);
void save_model(const LearnedDriverModel& model, const std::filesystem::path& path);
LearnedDriverModel load_model(const std::filesystem::path& path);

bool operator==(const CopulaModel& a, const CopulaModel& b);
bool operator==(const HorizonDistribution& a, const HorizonDistribution& b);
bool operator==(const LearnedDriverModel& a, const LearnedDriverModel& b);

}  // namespace rrdm
