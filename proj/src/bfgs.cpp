#include "rrdm/bfgs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rrdm/error.hpp"

namespace rrdm {
namespace {

constexpr double kC1 = 1e-4;
constexpr double kC2 = 0.9;
constexpr int kMaxBracket = 40;
constexpr int kMaxZoom = 40;

struct Trial {
  double alpha = 0.0;
  double value = 0.0;
  double slope = 0.0;
};

class LineSearch {
 public:
  LineSearch(const DifferentiableObjective& f, const Eigen::VectorXd& x, const Eigen::VectorXd& dir,
             int& evaluations)
      : f_(f), x_(x), dir_(dir), evaluations_(evaluations), grad_(x.size()) {}

  // Returns the accepted trial; alpha == 0 when no acceptable step was found.
  Trial run(double value0, double slope0, double alpha_init) {
    Trial start{0.0, value0, slope0};
    Trial prev = start;
    double alpha = alpha_init;
    for (int i = 0; i < kMaxBracket; ++i) {
      Trial cur = evaluate(alpha);
      if (cur.value > value0 + kC1 * alpha * slope0 || (i > 0 && cur.value >= prev.value)) {
        return zoom(start, prev, cur);
      }
      if (std::abs(cur.slope) <= -kC2 * slope0) return cur;
      if (cur.slope >= 0.0) return zoom(start, cur, prev);
      prev = cur;
      alpha *= 2.0;
    }
    return prev;
  }

  const Eigen::VectorXd& point() const { return point_; }
  const Eigen::VectorXd& gradient() const { return grad_; }

  Trial evaluate(double alpha) {
    point_ = x_ + alpha * dir_;
    ++evaluations_;
    double value = f_(point_, &grad_);
    Trial t{alpha, value, grad_.dot(dir_)};
    if (!std::isfinite(t.value) || !std::isfinite(t.slope)) {
      t.value = std::numeric_limits<double>::infinity();
      t.slope = 0.0;
    }
    return t;
  }

 private:
  Trial zoom(const Trial& start, Trial lo, Trial hi) {
    for (int i = 0; i < kMaxZoom; ++i) {
      const double width = hi.alpha - lo.alpha;
      double alpha = 0.5 * (lo.alpha + hi.alpha);
      if (std::isfinite(hi.value)) {
        // Minimizer of the quadratic through lo (value, slope) and hi (value).
        const double denom = 2.0 * (hi.value - lo.value - lo.slope * width);
        if (denom > 0.0) {
          const double cand = lo.alpha - lo.slope * width * width / denom;
          const double a = std::min(lo.alpha, hi.alpha), b = std::max(lo.alpha, hi.alpha);
          const double margin = 0.1 * (b - a);
          if (cand > a + margin && cand < b - margin) alpha = cand;
        }
      }
      Trial cur = evaluate(alpha);
      if (cur.value > start.value + kC1 * alpha * start.slope || cur.value >= lo.value) {
        hi = cur;
      } else {
        if (std::abs(cur.slope) <= -kC2 * start.slope) return cur;
        if (cur.slope * (hi.alpha - lo.alpha) >= 0.0) hi = lo;
        lo = cur;
      }
      if (std::abs(hi.alpha - lo.alpha) < 1e-16 * std::max(1.0, std::abs(lo.alpha))) break;
    }
    if (lo.alpha > 0.0) {
      // Re-evaluate so point() and gradient() refer to the returned trial.
      return evaluate(lo.alpha);
    }
    return lo;
  }

  const DifferentiableObjective& f_;
  const Eigen::VectorXd& x_;
  const Eigen::VectorXd& dir_;
  int& evaluations_;
  Eigen::VectorXd point_;
  Eigen::VectorXd grad_;
};

}  // namespace

BfgsResult minimize_bfgs(const DifferentiableObjective& objective, Eigen::VectorXd x0,
                         const BfgsOptions& options) {
  const Eigen::Index n = x0.size();
  BfgsResult result;
  result.x = std::move(x0);
  result.gradient.resize(n);
  result.value = objective(result.x, &result.gradient);
  result.evaluations = 1;
  if (!std::isfinite(result.value) || !result.gradient.allFinite()) {
    fail(ErrorKind::kNumerical, "objective is not finite at the initial point");
  }
  if (n == 0) {
    result.converged = true;
    return result;
  }

  Eigen::MatrixXd inv_hessian = Eigen::MatrixXd::Identity(n, n);
  bool fresh = true;
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    if (result.gradient.lpNorm<Eigen::Infinity>() <= options.gradient_tolerance) {
      result.converged = true;
      return result;
    }
    if (result.evaluations >= options.max_evaluations) return result;

    Eigen::VectorXd dir = -inv_hessian * result.gradient;
    double slope = result.gradient.dot(dir);
    if (!(slope < 0.0)) {
      inv_hessian.setIdentity();
      fresh = true;
      dir = -result.gradient;
      slope = -result.gradient.squaredNorm();
    }
    const double alpha_init = fresh ? std::min(1.0, 1.0 / result.gradient.norm()) : 1.0;

    LineSearch search(objective, result.x, dir, result.evaluations);
    const Trial step = search.run(result.value, slope, alpha_init);
    if (!(step.alpha > 0.0) || !(step.value < result.value)) {
      if (fresh) {
        // No descent along steepest direction either: at the numerical floor.
        result.converged = result.gradient.lpNorm<Eigen::Infinity>() <=
                           std::sqrt(options.gradient_tolerance);
        return result;
      }
      inv_hessian.setIdentity();
      fresh = true;
      continue;
    }

    const Eigen::VectorXd s = search.point() - result.x;
    const Eigen::VectorXd y = search.gradient() - result.gradient;
    const double previous = result.value;
    result.x = search.point();
    result.gradient = search.gradient();
    result.value = step.value;
    result.iterations = iter + 1;

    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (fresh) inv_hessian *= sy / y.squaredNorm();
      const double rho = 1.0 / sy;
      const Eigen::VectorXd hy = inv_hessian * y;
      inv_hessian += (rho * rho * y.dot(hy) + rho) * (s * s.transpose()) -
                     rho * (hy * s.transpose() + s * hy.transpose());
      fresh = false;
    }

    if (previous - result.value <=
        options.function_tolerance * std::max({1.0, std::abs(previous), std::abs(result.value)})) {
      result.converged = true;
      return result;
    }
  }
  result.converged = result.gradient.lpNorm<Eigen::Infinity>() <= options.gradient_tolerance;
  return result;
}

Eigen::VectorXd central_difference_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                            const Eigen::VectorXd& x, double step) {
  Eigen::VectorXd grad(x.size());
  Eigen::VectorXd probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = step * std::max(1.0, std::abs(x[i]));
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

DifferentiableObjective with_numeric_gradient(std::function<double(const Eigen::VectorXd&)> f,
                                              double step) {
  return [f = std::move(f), step](const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
    if (grad != nullptr) *grad = central_difference_gradient(f, x, step);
    return f(x);
  };
}

}  // namespace rrdm
