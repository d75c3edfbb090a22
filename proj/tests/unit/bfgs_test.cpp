#include <doctest.h>

#include <cmath>
#include <limits>

#include "rrdm/bfgs.hpp"
#include "rrdm/error.hpp"

using namespace rrdm;

TEST_CASE("minimizes a convex quadratic") {
  const auto f = [](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    const Eigen::Vector3d c(1.0, -2.0, 0.5);
    const Eigen::Vector3d s(1.0, 10.0, 100.0);
    const Eigen::VectorXd d = x - c;
    if (g) *g = 2.0 * s.cwiseProduct(d);
    return d.dot(s.cwiseProduct(d));
  };
  const auto r = minimize_bfgs(f, Eigen::VectorXd::Zero(3));
  CHECK(r.converged);
  CHECK(r.x(0) == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(r.x(1) == doctest::Approx(-2.0).epsilon(1e-8));
  CHECK(r.x(2) == doctest::Approx(0.5).epsilon(1e-8));
}

TEST_CASE("minimizes the Rosenbrock function") {
  const auto f = [](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    const double a = 1.0 - x(0), b = x(1) - x(0) * x(0);
    if (g) {
      g->resize(2);
      (*g)(0) = -2.0 * a - 400.0 * x(0) * b;
      (*g)(1) = 200.0 * b;
    }
    return a * a + 100.0 * b * b;
  };
  Eigen::VectorXd x0(2);
  x0 << -1.2, 1.0;
  const auto r = minimize_bfgs(f, x0);
  CHECK(r.x(0) == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(r.x(1) == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(r.value < 1e-10);
}

TEST_CASE("never returns a point worse than the start") {
  const auto f = with_numeric_gradient([](const Eigen::VectorXd& x) {
    return std::abs(x(0)) + std::cos(3.0 * x(1));
  });
  Eigen::VectorXd x0(2);
  x0 << 0.7, 0.2;
  double g0 = f(x0, nullptr);
  const auto r = minimize_bfgs(f, x0);
  CHECK(r.value <= g0);
}

TEST_CASE("numeric gradient matches the analytic one") {
  const auto f = [](const Eigen::VectorXd& x) { return std::exp(x(0)) * std::sin(x(1)) + x(2) * x(2) * x(0); };
  Eigen::VectorXd x(3);
  x << 0.3, -1.1, 2.0;
  const auto g = central_difference_gradient(f, x, 1e-6);
  CHECK(g(0) == doctest::Approx(std::exp(0.3) * std::sin(-1.1) + 4.0).epsilon(1e-6));
  CHECK(g(1) == doctest::Approx(std::exp(0.3) * std::cos(-1.1)).epsilon(1e-6));
  CHECK(g(2) == doctest::Approx(2.0 * 2.0 * 0.3).epsilon(1e-6));
}

TEST_CASE("non-finite start is a numerical error") {
  const auto f = [](const Eigen::VectorXd&, Eigen::VectorXd* g) {
    if (g) *g = Eigen::VectorXd::Zero(1);
    return std::numeric_limits<double>::quiet_NaN();
  };
  try {
    minimize_bfgs(f, Eigen::VectorXd::Zero(1));
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kNumerical);
  }
}
