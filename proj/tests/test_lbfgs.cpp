#include "doctest.h"
#include "hop/lbfgs.hpp"
#include "hop/rng.hpp"

using namespace hop;

namespace {

Eigen::VectorXd constant(int n, double v) {
  return Eigen::VectorXd::Constant(n, v);
}

}  // namespace

TEST_CASE("quadratic bowl converges to its center") {
  const int n = 6;
  Eigen::VectorXd center(n);
  center << 0.3, -0.7, 1.1, 0.0, -0.2, 0.9;
  const BoxObjective f = [&](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    if (g) *g = 2.0 * (x - center);
    return (x - center).squaredNorm();
  };
  const auto res = minimize_box(f, Eigen::VectorXd::Zero(n), constant(n, -5),
                                constant(n, 5));
  CHECK(res.status == LbfgsStatus::kConverged);
  CHECK((res.x - center).norm() < 1e-7);
}

TEST_CASE("rosenbrock in 2d") {
  const BoxObjective f = [](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    const double a = 1 - x[0], b = x[1] - x[0] * x[0];
    if (g) {
      (*g)[0] = -2 * a - 400 * x[0] * b;
      (*g)[1] = 200 * b;
    }
    return a * a + 100 * b * b;
  };
  LbfgsConfig cfg;
  cfg.max_iters = 500;
  const auto res = minimize_box(f, Eigen::Vector2d(-1.2, 1.0), constant(2, -10),
                                constant(2, 10), cfg);
  CHECK((res.x - Eigen::Vector2d(1, 1)).norm() < 1e-5);
}

TEST_CASE("active box constraint satisfies the projected condition") {
  // Unconstrained minimum at (3, 3); box caps it at 1.
  const BoxObjective f = [](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    const Eigen::VectorXd c = constant(2, 3.0);
    if (g) *g = 2.0 * (x - c);
    return (x - c).squaredNorm();
  };
  const auto res = minimize_box(f, Eigen::Vector2d(0, 0), constant(2, -1),
                                constant(2, 1));
  CHECK(res.status == LbfgsStatus::kConverged);
  CHECK(res.x[0] == doctest::Approx(1.0));
  CHECK(res.x[1] == doctest::Approx(1.0));
}

TEST_CASE("cost never increases from the starting point") {
  Rng rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 2 + int(rng.uniform_int(8));
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) m(i, j) = rng.uniform(-1, 1);
    const Eigen::MatrixXd quad = m.transpose() * m + 0.1 * Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd lin(n);
    for (int i = 0; i < n; ++i) lin[i] = rng.uniform(-1, 1);

    const BoxObjective f = [&](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
      if (g) *g = quad * x + lin;
      return 0.5 * x.dot(quad * x) + lin.dot(x);
    };
    Eigen::VectorXd x0(n);
    for (int i = 0; i < n; ++i) x0[i] = rng.uniform(-2, 2);
    const double f0 = f(x0, nullptr);
    const auto res = minimize_box(f, x0, constant(n, -1.5), constant(n, 1.5));
    CHECK(res.cost <= f0 + 1e-15);
    for (int i = 0; i < n; ++i) {
      CHECK(res.x[i] >= -1.5);
      CHECK(res.x[i] <= 1.5);
    }
  }
}

TEST_CASE("deterministic across calls") {
  const BoxObjective f = [](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    if (g) *g = 4 * x.array().pow(3).matrix() - 2 * x;
    return (x.array().pow(4) - x.array().pow(2)).sum();
  };
  const auto a = minimize_box(f, constant(4, 0.3), constant(4, -2), constant(4, 2));
  const auto b = minimize_box(f, constant(4, 0.3), constant(4, -2), constant(4, 2));
  CHECK(a.x == b.x);
  CHECK(a.cost == b.cost);
  CHECK(a.iters == b.iters);
}

TEST_CASE("non-finite objective reports kNonFinite") {
  const BoxObjective f = [](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    if (g) *g = constant(1, std::numeric_limits<double>::quiet_NaN());
    return std::numeric_limits<double>::quiet_NaN();
  };
  const auto res = minimize_box(f, constant(1, 0.0), constant(1, -1), constant(1, 1));
  CHECK(res.status == LbfgsStatus::kNonFinite);
}
