#include "hop/lbfgs.hpp"

#include <cmath>
#include <deque>
#include <stdexcept>

namespace hop {

namespace {

Eigen::VectorXd clamp(const Eigen::VectorXd& x, const Eigen::VectorXd& lo,
                      const Eigen::VectorXd& hi) {
  return x.cwiseMax(lo).cwiseMin(hi);
}

// Gradient with components pointing out of active bounds zeroed.
Eigen::VectorXd projected_gradient(const Eigen::VectorXd& x, const Eigen::VectorXd& g,
                                   const Eigen::VectorXd& lo,
                                   const Eigen::VectorXd& hi) {
  Eigen::VectorXd pg = g;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (x[i] <= lo[i] && g[i] > 0) pg[i] = 0;
    if (x[i] >= hi[i] && g[i] < 0) pg[i] = 0;
  }
  return pg;
}

struct Pair {
  Eigen::VectorXd s, y;
  double rho;
};

// Two-loop recursion: d = -H g with H0 = gamma I.
Eigen::VectorXd two_loop(const std::deque<Pair>& mem, const Eigen::VectorXd& g) {
  Eigen::VectorXd q = g;
  std::vector<double> alpha(mem.size());
  for (int i = static_cast<int>(mem.size()) - 1; i >= 0; --i) {
    alpha[i] = mem[i].rho * mem[i].s.dot(q);
    q -= alpha[i] * mem[i].y;
  }
  double gamma = 1.0;
  if (!mem.empty()) {
    const auto& last = mem.back();
    gamma = last.s.dot(last.y) / last.y.dot(last.y);
  }
  Eigen::VectorXd r = gamma * q;
  for (size_t i = 0; i < mem.size(); ++i) {
    const double beta = mem[i].rho * mem[i].y.dot(r);
    r += (alpha[i] - beta) * mem[i].s;
  }
  return -r;
}

}  // namespace

LbfgsResult minimize_box(const BoxObjective& objective, const Eigen::VectorXd& x0,
                         const Eigen::VectorXd& lo, const Eigen::VectorXd& hi,
                         const LbfgsConfig& cfg) {
  if (x0.size() != lo.size() || x0.size() != hi.size())
    throw std::invalid_argument("minimize_box: dimension mismatch");

  LbfgsResult res;
  res.x = clamp(x0, lo, hi);

  Eigen::VectorXd g(x0.size());
  double f = objective(res.x, &g);
  ++res.evals;
  if (!std::isfinite(f) || !g.allFinite()) {
    res.status = LbfgsStatus::kNonFinite;
    res.cost = f;
    return res;
  }

  std::deque<Pair> mem;
  bool tried_restart = false;

  for (res.iters = 0; res.iters < cfg.max_iters; ++res.iters) {
    const Eigen::VectorXd pg = projected_gradient(res.x, g, lo, hi);
    if (pg.lpNorm<Eigen::Infinity>() <= cfg.grad_tol) {
      res.status = LbfgsStatus::kConverged;
      res.cost = f;
      return res;
    }

    Eigen::VectorXd d = mem.empty() ? Eigen::VectorXd(-pg) : two_loop(mem, g);
    // Do not push into active bounds.
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      if (res.x[i] <= lo[i] && d[i] < 0) d[i] = 0;
      if (res.x[i] >= hi[i] && d[i] > 0) d[i] = 0;
    }
    double slope = g.dot(d);
    if (!(slope < 0)) {
      // Not a descent direction; restart from steepest descent.
      mem.clear();
      d = -pg;
      slope = g.dot(d);
      if (!(slope < 0)) {
        res.status = LbfgsStatus::kConverged;  // pg is 0 within fp precision
        res.cost = f;
        return res;
      }
    }

    // Backtracking line search on the projection arc x(a) = clamp(x + a d),
    // targeting Armijo decrease; the strong Wolfe curvature check decides
    // whether to grow the step. Without curvature memory the direction is a
    // raw gradient whose scale is arbitrary, so cap the first trial step.
    const double d_inf = d.lpNorm<Eigen::Infinity>();
    double alpha0 = mem.empty() ? std::min(1.0, 1.0 / std::max(1e-12, d.norm())) : 1.0;
    if (cfg.max_step > 0) alpha0 = std::min(alpha0, cfg.max_step / std::max(1e-300, d_inf));
    double alpha = alpha0;
    bool accepted = false;
    Eigen::VectorXd x_new, g_new(g.size());
    double f_new = f;
    for (int ls = 0; ls < 50; ++ls) {
      x_new = clamp(res.x + alpha * d, lo, hi);
      const Eigen::VectorXd step = x_new - res.x;
      if (step.lpNorm<Eigen::Infinity>() == 0.0) {
        alpha *= 0.5;
        continue;
      }
      f_new = objective(x_new, &g_new);
      ++res.evals;
      if (!std::isfinite(f_new) || !g_new.allFinite()) {
        res.status = LbfgsStatus::kNonFinite;
        res.cost = f;
        return res;
      }
      if (f_new <= f + cfg.c1 * g.dot(step)) {
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      if (!mem.empty() && !tried_restart) {
        // One restart from steepest descent before giving up.
        mem.clear();
        tried_restart = true;
        continue;
      }
      res.status = LbfgsStatus::kLineSearchFail;
      res.cost = f;
      return res;
    }
    tried_restart = false;

    // Grow the step while Armijo still holds and curvature is unmet.
    if (alpha == alpha0) {
      for (int grow = 0; grow < 8; ++grow) {
        if (std::abs(g_new.dot(d)) <= cfg.c2 * std::abs(slope)) break;
        const double alpha_try = alpha * 2.0;
        if (cfg.max_step > 0 && alpha_try * d_inf > cfg.max_step) break;
        const Eigen::VectorXd x_try = clamp(res.x + alpha_try * d, lo, hi);
        if ((x_try - x_new).lpNorm<Eigen::Infinity>() == 0.0) break;
        Eigen::VectorXd g_try(g.size());
        const double f_try = objective(x_try, &g_try);
        ++res.evals;
        if (!std::isfinite(f_try) || !g_try.allFinite()) {
          res.status = LbfgsStatus::kNonFinite;
          res.cost = f;
          return res;
        }
        if (f_try > f + cfg.c1 * g.dot(x_try - res.x)) break;
        alpha = alpha_try;
        x_new = x_try;
        f_new = f_try;
        g_new = g_try;
      }
    }

    const Eigen::VectorXd s = x_new - res.x;
    const Eigen::VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-10 * s.norm() * y.norm()) {
      mem.push_back({s, y, 1.0 / sy});
      if (static_cast<int>(mem.size()) > cfg.memory) mem.pop_front();
    } else {
      mem.clear();  // curvature condition failed; restart the approximation
    }

    res.x = x_new;
    f = f_new;
    g = g_new;
  }

  res.status = LbfgsStatus::kMaxIters;
  res.cost = f;
  return res;
}

}  // namespace hop
