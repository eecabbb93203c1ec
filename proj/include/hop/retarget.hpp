#pragma once

#include <string>
#include <vector>

#include "hop/clip.hpp"
#include "hop/lbfgs.hpp"
#include "hop/trajectory.hpp"

namespace hop {

/// The per-step retargeting problem: match bound keypoints, stay close to the
/// previous proprioception, respect joint limits.
struct RetargetProblem {
  const KinematicChain* chain = nullptr;
  std::vector<KeypointBinding> bindings;
  double lambda = 0.05;  // smoothness weight

  void validate() const {
    if (!chain) throw std::invalid_argument("retarget problem has no chain");
    if (!(lambda >= 0)) throw std::invalid_argument("lambda must be >= 0");
    validate_bindings(*chain, bindings);
  }
};

enum class ErrorMetric { kWorstKeypoint, kMeanKeypoint };

struct SceneRandomization {
  double table_distance_lo = 0.55;  // m, centered on the paper's 0.65
  double table_distance_hi = 0.75;
  double table_jitter = 0.2;        // relative half-extent jitter
  double init_joint_noise = 0.3;    // rad, uniform
};

struct RetargetConfig {
  int runs_per_clip = 700;
  double max_keypoint_error = 0.03;  // m
  LbfgsConfig lbfgs;                 // memory 8, max_iters 100, grad_tol 1e-8
  SceneRandomization scene_randomization;
  uint64_t rng_seed = 0;
  int n_points = 64;                 // observation cloud size
  ErrorMetric metric = ErrorMetric::kWorstKeypoint;
  int workers = 1;
};

enum class RejectReason { kNone, kErrorThreshold, kCollision, kSolverAbort, kEmptyClip };

const char* reject_reason_name(RejectReason r);

struct RetargetResult {
  SensorimotorTrajectory trajectory;
  double max_error = 0.0;
  bool collided = false;
  uint64_t seed = 0;
  bool accepted = false;
  RejectReason reason = RejectReason::kNone;
};

/// Cost of Eq.-style step matching:
///   1/2 sum_j w_j ||x_h[j] - f_j(a)||^2 + lambda ||a - phi_prev||^2.
double step_cost(const RetargetProblem& problem, const JointVector& a,
                 const Eigen::Matrix<double, Eigen::Dynamic, 3>& hand_keypoints,
                 const JointVector& phi_prev);

/// Analytic gradient of step_cost: -J^T W r + 2 lambda (a - phi_prev).
JointVector step_grad(const RetargetProblem& problem, const JointVector& a,
                      const Eigen::Matrix<double, Eigen::Dynamic, 3>& hand_keypoints,
                      const JointVector& phi_prev);

/// Box-constrained solve of the per-step cost from a_init (clamped first).
/// Returns a feasible action with cost no greater than at the init point.
JointVector solve_step(const RetargetProblem& problem,
                       const Eigen::Matrix<double, Eigen::Dynamic, 3>& hand_keypoints,
                       const JointVector& phi_prev, const JointVector& a_init,
                       const RetargetConfig& cfg);

/// Keypoint error of configuration a against the frame's keypoints, using the
/// configured metric over positive-weight bindings.
double keypoint_error(const RetargetProblem& problem, const JointVector& a,
                      const Eigen::Matrix<double, Eigen::Dynamic, 3>& hand_keypoints,
                      ErrorMetric metric);

/// One simulator-in-the-loop pass over the clip: solve each step from the
/// simulated proprioception, execute through PD dynamics, play the object
/// back kinematically, record observations, and gate on error/collision.
RetargetResult retarget_clip(const RetargetProblem& problem, const HandObjectClip& clip,
                             const Scene& scene, const JointVector& q_init,
                             const RetargetConfig& cfg, uint64_t seed);

/// runs_per_clip independent runs with freshly sampled table placement and
/// initial joints. Deterministic given cfg.rng_seed; runs may execute on
/// cfg.workers threads, results are always in run order.
std::vector<RetargetResult> randomized_batch(const RetargetProblem& problem,
                                             const HandObjectClip& clip,
                                             const RetargetConfig& cfg,
                                             const Scene& base_scene);

/// Keeps exactly the runs with max_error < threshold and no collision.
std::vector<SensorimotorTrajectory> prune(const std::vector<RetargetResult>& results,
                                          const RetargetConfig& cfg);

/// Table placement / initial joint sampling used by randomized_batch,
/// exposed for tests.
Scene sample_scene(const Scene& base_scene, const SceneRandomization& sr, Rng& rng);
JointVector sample_init_joints(const KinematicChain& chain, double noise, Rng& rng);

}  // namespace hop
