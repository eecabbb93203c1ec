#pragma once

#include <Eigen/Dense>
#include <functional>

namespace hop {

/// f(x) with optional gradient output. Must return the same values for the
/// same x (the solver re-evaluates during line search).
using BoxObjective =
    std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd* grad)>;

struct LbfgsConfig {
  int memory = 8;
  int max_iters = 100;
  double grad_tol = 1e-8;   // on the projected gradient, inf norm
  double c1 = 1e-4;         // Armijo sufficient decrease
  double c2 = 0.9;          // strong Wolfe curvature
  // Per-iteration displacement cap (inf norm). Keeps early steps from
  // clamping onto distant box faces, which creates spurious stationary
  // points of the projected problem.
  double max_step = 0.5;
};

enum class LbfgsStatus {
  kConverged,       // projected gradient below tolerance
  kMaxIters,
  kLineSearchFail,  // no acceptable step along the final direction
  kNonFinite,       // cost or gradient became non-finite
};

struct LbfgsResult {
  Eigen::VectorXd x;
  double cost = 0.0;
  int iters = 0;
  int evals = 0;
  LbfgsStatus status = LbfgsStatus::kMaxIters;
};

/// Low-storage BFGS with box constraints handled by projection: line-search
/// trial points are clamped to [lo, hi] and sufficient decrease is measured
/// against the projected step. Memory is restarted whenever the curvature
/// condition s.y > 0 fails. Deterministic.
LbfgsResult minimize_box(const BoxObjective& objective, const Eigen::VectorXd& x0,
                         const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                         const LbfgsConfig& cfg = {});

}  // namespace hop
