#pragma once

#include <functional>

#include <Eigen/Core>

namespace rrdm {

/// Returns f(x); fills `grad` when it is non-null.
using DifferentiableObjective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd* grad)>;

struct BfgsOptions {
  int max_iterations = 200;
  int max_evaluations = 2000;
  double gradient_tolerance = 1e-9;  // on the infinity norm
  double function_tolerance = 1e-14;  // relative decrease per iteration
};

struct BfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  Eigen::VectorXd gradient;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
};

/// Dense BFGS with a strong-Wolfe line search. Throws Error(kNumerical) when
/// the objective is not finite at the starting point.
BfgsResult minimize_bfgs(const DifferentiableObjective& objective, Eigen::VectorXd x0,
                         const BfgsOptions& options = {});

/// Central-difference gradient of a scalar function.
Eigen::VectorXd central_difference_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                            const Eigen::VectorXd& x, double step);

/// Wraps a value-only function with a central-difference gradient.
DifferentiableObjective with_numeric_gradient(std::function<double(const Eigen::VectorXd&)> f,
                                              double step = 1e-6);

}  // namespace rrdm
