#include "hop/synth.hpp"

#include <cmath>

#include "hop/retarget.hpp"

namespace hop {

void SynthConfig::validate() const {
  if (!chain) throw std::invalid_argument("synth config has no chain");
  validate_bindings(*chain, bindings);
  if (n_clips < 1) throw std::invalid_argument("n_clips must be >= 1");
  if (!(fps > 0)) throw std::invalid_argument("fps must be > 0");
  if (arm_dof < 1 || arm_dof > chain->dof())
    throw std::invalid_argument("arm_dof out of range");
  if (palm_link < 0 || palm_link >= chain->dof())
    throw std::invalid_argument("palm_link out of range");
  for (const auto* p : {&reach, &grasp_close, &lift, &carry})
    if (p->lo < 0 || p->hi < p->lo)
      throw std::invalid_argument("phase duration range is invalid");
  if (!(max_hand_speed > 0)) throw std::invalid_argument("max_hand_speed must be > 0");
}

Eigen::Matrix<double, Eigen::Dynamic, 3> object_surface_points(const ObjectSpec& spec,
                                                               uint64_t seed) {
  Rng rng(seed);
  const int n = spec.n_surface_points;
  if (n < 1) throw std::invalid_argument("object needs at least one surface point");
  Eigen::Matrix<double, Eigen::Dynamic, 3> pts(n, 3);

  switch (spec.shape) {
    case ObjectSpec::Shape::kBox: {
      const Vector3d h = spec.size / 2.0;
      // Face picked proportionally to its area.
      const double ax = h.y() * h.z(), ay = h.x() * h.z(), az = h.x() * h.y();
      const double total = 2 * (ax + ay + az);
      for (int i = 0; i < n; ++i) {
        double u = rng.uniform() * total;
        int face;
        if (u < 2 * ax) face = 0;
        else if (u < 2 * (ax + ay)) face = 1;
        else face = 2;
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        Vector3d p;
        p[face] = sign * h[face];
        p[(face + 1) % 3] = rng.uniform(-h[(face + 1) % 3], h[(face + 1) % 3]);
        p[(face + 2) % 3] = rng.uniform(-h[(face + 2) % 3], h[(face + 2) % 3]);
        pts.row(i) = p.transpose();
      }
      break;
    }
    case ObjectSpec::Shape::kSphere: {
      const double r = spec.size.x() / 2.0;
      for (int i = 0; i < n; ++i) {
        const double z = rng.uniform(-1.0, 1.0);
        const double phi = rng.uniform(0.0, 2.0 * M_PI);
        const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
        pts.row(i) = r * Vector3d(s * std::cos(phi), s * std::sin(phi), z).transpose();
      }
      break;
    }
    case ObjectSpec::Shape::kCylinder: {
      const double r = spec.size.x() / 2.0, hh = spec.size.z() / 2.0;
      const double side = 2 * M_PI * r * 2 * hh, cap = M_PI * r * r;
      for (int i = 0; i < n; ++i) {
        const double u = rng.uniform() * (side + 2 * cap);
        const double phi = rng.uniform(0.0, 2.0 * M_PI);
        if (u < side) {
          pts.row(i) = Vector3d(r * std::cos(phi), r * std::sin(phi),
                                rng.uniform(-hh, hh))
                           .transpose();
        } else {
          const double rr = r * std::sqrt(rng.uniform());
          const double z = u < side + cap ? hh : -hh;
          pts.row(i) =
              Vector3d(rr * std::cos(phi), rr * std::sin(phi), z).transpose();
        }
      }
      break;
    }
  }
  return pts;
}

JointVector min_jerk(const JointVector& a, const JointVector& b, double s) {
  s = std::clamp(s, 0.0, 1.0);
  const double w = s * s * s * (10.0 + s * (-15.0 + 6.0 * s));
  return a + w * (b - a);
}

HandObjectClip clip_from_joint_motion(
    const KinematicChain& chain, const std::vector<KeypointBinding>& bindings,
    const std::vector<JointVector>& joint_trajectory, double fps,
    const RigidTransform& object_rest_pose, int palm_link, int attach_frame,
    const Eigen::Matrix<double, Eigen::Dynamic, 3>& object_points) {
  if (joint_trajectory.empty())
    throw std::invalid_argument("clip_from_joint_motion: empty joint trajectory");
  validate_bindings(chain, bindings);

  HandObjectClip clip;
  clip.fps = fps;

  RigidTransform object_from_palm;  // grasp offset captured at attachment
  if (attach_frame >= 0 && attach_frame < static_cast<int>(joint_trajectory.size())) {
    const auto poses = chain.forward_kinematics(joint_trajectory[attach_frame]);
    object_from_palm = poses[palm_link].inverse() * object_rest_pose;
  }

  for (size_t k = 0; k < joint_trajectory.size(); ++k) {
    const auto poses = chain.forward_kinematics(joint_trajectory[k]);
    ClipFrame frame;
    frame.hand_keypoints.resize(static_cast<Eigen::Index>(bindings.size()), 3);
    for (size_t j = 0; j < bindings.size(); ++j)
      frame.hand_keypoints.row(static_cast<Eigen::Index>(j)) =
          poses[bindings[j].link].apply(bindings[j].local_offset).transpose();
    frame.object_pose = (attach_frame >= 0 && static_cast<int>(k) >= attach_frame)
                            ? poses[palm_link] * object_from_palm
                            : object_rest_pose;
    frame.object_points = object_points;
    clip.frames.push_back(std::move(frame));
  }
  return clip;
}

namespace {

// Arm-only IK: place the palm frame origin at `target`. Finger joints are
// part of the solve but get overwritten by the caller.
JointVector palm_ik(const KinematicChain& chain, int palm_link,
                    const Vector3d& target, const JointVector& seed) {
  RetargetProblem problem;
  problem.chain = &chain;
  problem.bindings = {{0, palm_link, Vector3d::Zero(), 1.0}};
  problem.lambda = 1e-3;

  RetargetConfig cfg;
  cfg.lbfgs.max_iters = 300;
  cfg.lbfgs.grad_tol = 1e-10;

  Eigen::Matrix<double, Eigen::Dynamic, 3> x(1, 3);
  x.row(0) = target.transpose();
  return solve_step(problem, x, seed, seed, cfg);
}

struct PhasePlan {
  JointVector from, to;
  int frames = 0;
};

}  // namespace

std::vector<HandObjectClip> synth_clips(const SynthConfig& cfg) {
  cfg.validate();
  const auto& chain = *cfg.chain;

  std::vector<HandObjectClip> clips;
  clips.reserve(cfg.n_clips);

  for (int c = 0; c < cfg.n_clips; ++c) {
    Rng rng = Rng::split(cfg.rng_seed, c);

    // Object resting pose on the table, with a random yaw.
    Vector3d obj_pos = cfg.object_center;
    for (int i = 0; i < 3; ++i)
      obj_pos[i] += rng.uniform(-cfg.object_jitter[i], cfg.object_jitter[i]);
    RigidTransform obj_rest;
    obj_rest.rotation = axis_angle(Vector3d::UnitZ(), rng.uniform(0, 2 * M_PI));
    obj_rest.translation = obj_pos;

    const auto surface =
        object_surface_points(cfg.object, mix64(cfg.rng_seed ^ mix64(1000 + c)));

    // Joint-space waypoints.
    JointVector q_start = chain.rest_pose();
    for (int i = 0; i < q_start.size(); ++i)
      q_start[i] += rng.uniform(-cfg.start_pose_noise, cfg.start_pose_noise);
    q_start = chain.clamp_to_limits(q_start);

    JointVector q_pregrasp = palm_ik(chain, cfg.palm_link,
                                     obj_pos + cfg.palm_standoff, q_start);
    for (int i = cfg.arm_dof; i < chain.dof(); ++i) q_pregrasp[i] = q_start[i];

    JointVector q_grasp = q_pregrasp;
    const double closed = rng.uniform(cfg.finger_closed_lo, cfg.finger_closed_hi);
    for (int i = cfg.arm_dof; i < chain.dof(); ++i)
      q_grasp[i] = closed * chain.joints()[i].limit_hi;

    JointVector q_lift = palm_ik(
        chain, cfg.palm_link,
        obj_pos + cfg.palm_standoff + Vector3d(0, 0, cfg.lift_height), q_grasp);
    for (int i = cfg.arm_dof; i < chain.dof(); ++i) q_lift[i] = q_grasp[i];

    const bool do_carry =
        cfg.carry.hi > 0 && rng.uniform() < cfg.carry_probability;
    JointVector q_carry = q_lift;
    double carry_dur = 0.0;
    if (do_carry) {
      const Vector3d lateral(rng.uniform(-0.15, 0.15), rng.uniform(-0.2, 0.2), 0);
      q_carry = palm_ik(chain, cfg.palm_link,
                        obj_pos + cfg.palm_standoff +
                            Vector3d(0, 0, cfg.lift_height) + lateral,
                        q_lift);
      for (int i = cfg.arm_dof; i < chain.dof(); ++i) q_carry[i] = q_lift[i];
      carry_dur = rng.uniform(cfg.carry.lo, cfg.carry.hi);
    }

    double durations[4] = {rng.uniform(cfg.reach.lo, cfg.reach.hi),
                           rng.uniform(cfg.grasp_close.lo, cfg.grasp_close.hi),
                           rng.uniform(cfg.lift.lo, cfg.lift.hi), carry_dur};

    // Build the minimum-jerk frame sequence, stretching durations until the
    // keypoint speed cap holds.
    HandObjectClip clip;
    for (int attempt = 0; attempt < 6; ++attempt) {
      std::vector<PhasePlan> phases = {
          {q_start, q_pregrasp, std::max(2, int(std::round(durations[0] * cfg.fps)))},
          {q_pregrasp, q_grasp, std::max(2, int(std::round(durations[1] * cfg.fps)))},
          {q_grasp, q_lift, std::max(2, int(std::round(durations[2] * cfg.fps)))}};
      if (do_carry)
        phases.push_back(
            {q_lift, q_carry, std::max(2, int(std::round(durations[3] * cfg.fps)))});

      std::vector<JointVector> traj;
      for (const auto& ph : phases)
        for (int f = 0; f < ph.frames; ++f)
          traj.push_back(min_jerk(ph.from, ph.to, double(f) / (ph.frames - 1)));

      const int attach = phases[0].frames + phases[1].frames - 1;
      clip = clip_from_joint_motion(chain, cfg.bindings, traj, cfg.fps, obj_rest,
                                    cfg.palm_link, attach, surface);

      double max_disp = 0.0;
      for (size_t k = 1; k < clip.frames.size(); ++k)
        max_disp = std::max(max_disp,
                            (clip.frames[k].hand_keypoints -
                             clip.frames[k - 1].hand_keypoints)
                                .rowwise()
                                .norm()
                                .maxCoeff());
      const double cap = cfg.max_hand_speed / cfg.fps;
      if (max_disp <= cap) break;
      const double stretch = max_disp / cap * 1.05;
      for (double& d : durations) d *= stretch;
    }

    clip.source = "synth:" + std::to_string(cfg.rng_seed) + ":" + std::to_string(c);
    clip.validate();
    clips.push_back(std::move(clip));
  }
  return clips;
}

}  // namespace hop
