#include "hop/retarget.hpp"

#include <atomic>
#include <cmath>
#include <sstream>
#include <thread>

namespace hop {

const char* reject_reason_name(RejectReason r) {
  switch (r) {
    case RejectReason::kNone: return "ok";
    case RejectReason::kErrorThreshold: return "error-threshold";
    case RejectReason::kCollision: return "collision";
    case RejectReason::kSolverAbort: return "solver-abort";
    case RejectReason::kEmptyClip: return "empty-clip";
  }
  return "unknown";
}

double step_cost(const RetargetProblem& problem, const JointVector& a,
                 const Eigen::Matrix<double, Eigen::Dynamic, 3>& hand_keypoints,
                 const JointVector& phi_prev) {
  if (a.size() != problem.chain->dof() || phi_prev.size() != a.size())
    throw std::invalid_argument("step_cost: dimension mismatch");
  const auto points = keypoint_positions(*problem.chain, a, problem.bindings);
  double cost = 0.0;
  for (size_t j = 0; j < problem.bindings.size(); ++j) {
    const auto& b = problem.bindings[j];
    if (b.hand_keypoint_index >= hand_keypoints.rows())
      throw std::invalid_argument("binding keypoint index out of range for clip");
    const Vector3d r =
        hand_keypoints.row(b.hand_keypoint_index).transpose() - points[j];
    cost += 0.5 * b.weight * r.squaredNorm();
  }
  cost += problem.lambda * (a - phi_prev).squaredNorm();
  return cost;
}

JointVector step_grad(const RetargetProblem& problem, const JointVector& a,
                      const Eigen::Matrix<double, Eigen::Dynamic, 3>& hand_keypoints,
                      const JointVector& phi_prev) {
  if (a.size() != problem.chain->dof() || phi_prev.size() != a.size())
    throw std::invalid_argument("step_grad: dimension mismatch");
  const auto points = keypoint_positions(*problem.chain, a, problem.bindings);
  const Eigen::MatrixXd jac = keypoint_jacobian(*problem.chain, a, problem.bindings);

  JointVector grad = 2.0 * problem.lambda * (a - phi_prev);
  for (size_t j = 0; j < problem.bindings.size(); ++j) {
    const auto& b = problem.bindings[j];
    const Vector3d r =
        hand_keypoints.row(b.hand_keypoint_index).transpose() - points[j];
    grad -= b.weight * jac.middleRows<3>(3 * static_cast<Eigen::Index>(j)).transpose() * r;
  }
  return grad;
}

JointVector solve_step(const RetargetProblem& problem,
                       const Eigen::Matrix<double, Eigen::Dynamic, 3>& hand_keypoints,
                       const JointVector& phi_prev, const JointVector& a_init,
                       const RetargetConfig& cfg) {
  const auto& chain = *problem.chain;
  const BoxObjective objective = [&](const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
    if (grad) *grad = step_grad(problem, x, hand_keypoints, phi_prev);
    return step_cost(problem, x, hand_keypoints, phi_prev);
  };
  const LbfgsResult res = minimize_box(objective, chain.clamp_to_limits(a_init),
                                       chain.lower_limits(), chain.upper_limits(),
                                       cfg.lbfgs);
  if (res.status == LbfgsStatus::kNonFinite)
    throw std::runtime_error("solve_step: non-finite cost or gradient");
  return res.x;
}

double keypoint_error(const RetargetProblem& problem, const JointVector& a,
                      const Eigen::Matrix<double, Eigen::Dynamic, 3>& hand_keypoints,
                      ErrorMetric metric) {
  const auto points = keypoint_positions(*problem.chain, a, problem.bindings);
  double worst = 0.0, sum = 0.0;
  int count = 0;
  for (size_t j = 0; j < problem.bindings.size(); ++j) {
    const auto& b = problem.bindings[j];
    if (b.weight <= 0) continue;
    const double d =
        (hand_keypoints.row(b.hand_keypoint_index).transpose() - points[j]).norm();
    worst = std::max(worst, d);
    sum += d;
    ++count;
  }
  if (count == 0) return 0.0;
  return metric == ErrorMetric::kWorstKeypoint ? worst : sum / count;
}

namespace {

// Fallback object surface for clips that carry no point set: a 5 cm cube
// sampled on a fixed grid, so observations stay well-defined.
Eigen::Matrix<double, Eigen::Dynamic, 3> default_object_points() {
  std::vector<Vector3d> pts;
  const double h = 0.025;
  const int n = 4;
  for (int face = 0; face < 3; ++face)
    for (int sign = -1; sign <= 1; sign += 2)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          Vector3d p;
          p[face] = sign * h;
          p[(face + 1) % 3] = -h + 2.0 * h * (i + 0.5) / n;
          p[(face + 2) % 3] = -h + 2.0 * h * (j + 0.5) / n;
          pts.push_back(p);
        }
  Eigen::Matrix<double, Eigen::Dynamic, 3> out(pts.size(), 3);
  for (size_t i = 0; i < pts.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
  return out;
}

std::string scene_summary(const Scene& scene) {
  std::ostringstream ss;
  ss << "table_center=[" << scene.table.center.transpose() << "] half_extents=["
     << scene.table.half_extents.transpose() << "] dt=" << scene.dt;
  return ss.str();
}

}  // namespace

RetargetResult retarget_clip(const RetargetProblem& problem, const HandObjectClip& clip,
                             const Scene& scene, const JointVector& q_init,
                             const RetargetConfig& cfg, uint64_t seed) {
  problem.validate();
  scene.validate();
  if (scene.chain != problem.chain)
    throw std::invalid_argument("retarget_clip: scene and problem use different chains");
  clip.validate();

  RetargetResult result;
  result.seed = seed;
  result.trajectory.meta.clip_id = clip.source;
  result.trajectory.meta.seed = seed;
  result.trajectory.meta.scene_summary = scene_summary(scene);

  Rng rng(seed);
  Simulator sim(scene);
  const JointVector q0 = problem.chain->clamp_to_limits(q_init);
  sim.reset(q0, clip.frames.front().object_pose);

  const Eigen::Matrix<double, Eigen::Dynamic, 3> surface =
      clip.frames.front().object_points ? *clip.frames.front().object_points
                                        : default_object_points();

  JointVector a_prev = q0;
  double max_error = 0.0;
  try {
    if (sim.check_collision().any) {
      result.collided = true;
    } else {
      for (size_t k = 0; k < clip.frames.size(); ++k) {
        const auto& frame = clip.frames[k];
        sim.set_object_pose(frame.object_pose);

        TrajectoryStep step;
        step.obs = sim.observe(surface, cfg.n_points, rng);

        const JointVector phi_prev = sim.state().q;
        const JointVector a =
            solve_step(problem, frame.hand_keypoints, phi_prev, a_prev, cfg);
        max_error = std::max(
            max_error, keypoint_error(problem, a, frame.hand_keypoints, cfg.metric));

        step.action = a;
        result.trajectory.steps.push_back(std::move(step));

        sim.step(a);
        if (sim.check_collision().any) {
          result.collided = true;
          break;
        }
        a_prev = a;
      }
    }
  } catch (const std::runtime_error&) {
    result.reason = RejectReason::kSolverAbort;
    result.max_error = std::numeric_limits<double>::infinity();
    result.accepted = false;
    return result;
  }

  result.max_error = max_error;
  result.trajectory.meta.max_error = max_error;
  if (result.collided) {
    result.reason = RejectReason::kCollision;
  } else if (!(max_error < cfg.max_keypoint_error)) {
    result.reason = RejectReason::kErrorThreshold;
  }
  result.accepted = !result.collided && max_error < cfg.max_keypoint_error;
  return result;
}

Scene sample_scene(const Scene& base_scene, const SceneRandomization& sr, Rng& rng) {
  Scene scene = base_scene;
  const double distance = rng.uniform(sr.table_distance_lo, sr.table_distance_hi);
  scene.table.center.x() = distance;
  for (int i = 0; i < 3; ++i)
    scene.table.half_extents[i] *=
        1.0 + rng.uniform(-sr.table_jitter, sr.table_jitter);
  // Keep the table resting on the floor.
  scene.table.center.z() = scene.table.half_extents.z();
  return scene;
}

JointVector sample_init_joints(const KinematicChain& chain, double noise, Rng& rng) {
  JointVector q = chain.rest_pose();
  for (int i = 0; i < q.size(); ++i) q[i] += rng.uniform(-noise, noise);
  return chain.clamp_to_limits(q);
}

std::vector<RetargetResult> randomized_batch(const RetargetProblem& problem,
                                             const HandObjectClip& clip,
                                             const RetargetConfig& cfg,
                                             const Scene& base_scene) {
  if (cfg.runs_per_clip < 1)
    throw std::invalid_argument("runs_per_clip must be >= 1");

  std::vector<RetargetResult> results(cfg.runs_per_clip);
  const int workers = std::max(1, cfg.workers);

  auto run_one = [&](int run) {
    const uint64_t run_seed = mix64(cfg.rng_seed ^ mix64(run + 1));
    Rng rng(run_seed);
    const Scene scene = sample_scene(base_scene, cfg.scene_randomization, rng);
    const JointVector q_init = sample_init_joints(
        *problem.chain, cfg.scene_randomization.init_joint_noise, rng);
    results[run] = retarget_clip(problem, clip, scene, q_init, cfg, run_seed);
  };

  if (workers == 1) {
    for (int run = 0; run < cfg.runs_per_clip; ++run) run_one(run);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (int run = next.fetch_add(1); run < cfg.runs_per_clip;
             run = next.fetch_add(1))
          run_one(run);
      });
    for (auto& t : pool) t.join();
  }
  return results;
}

std::vector<SensorimotorTrajectory> prune(const std::vector<RetargetResult>& results,
                                          const RetargetConfig& cfg) {
  std::vector<SensorimotorTrajectory> kept;
  for (const auto& r : results)
    if (!r.collided && r.max_error < cfg.max_keypoint_error &&
        r.reason != RejectReason::kSolverAbort)
      kept.push_back(r.trajectory);
  return kept;
}

}  // namespace hop
