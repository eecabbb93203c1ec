#pragma once

#include "hop/clip.hpp"
#include "hop/kinematics.hpp"
#include "hop/rng.hpp"

namespace hop {

/// Object primitive for synthetic clips and toy tasks.
struct ObjectSpec {
  enum class Shape { kBox, kSphere, kCylinder };
  Shape shape = Shape::kBox;
  Vector3d size = {0.05, 0.05, 0.05};  // box: full extents; sphere/cylinder: x = diameter, z = height
  int n_surface_points = 256;
};

/// Deterministic surface point set in the object frame.
Eigen::Matrix<double, Eigen::Dynamic, 3> object_surface_points(const ObjectSpec& spec,
                                                               uint64_t seed);

struct PhaseRange {
  double lo = 0.5, hi = 1.0;  // seconds
};

/// Synthetic hand-object clips: a minimum-jerk joint-space motion
/// (reach, close fingers, lift, optional carry) rendered to hand keypoints
/// through the chain's forward kinematics, with the object resting until the
/// grasp completes and following the palm afterwards.
struct SynthConfig {
  const KinematicChain* chain = nullptr;
  std::vector<KeypointBinding> bindings;  // clip keypoint j <- binding j
  int arm_dof = 0;                        // leading joints; the rest are fingers
  int palm_link = -1;

  int n_clips = 1;
  double fps = 20.0;
  PhaseRange reach{0.8, 1.6};
  PhaseRange grasp_close{0.5, 0.9};
  PhaseRange lift{0.6, 1.2};
  PhaseRange carry{0.0, 0.0};  // hi == 0 disables the carry phase
  double carry_probability = 0.0;

  ObjectSpec object;
  Vector3d object_center = {0.55, 0.0, 0.42};  // nominal resting position
  Vector3d object_jitter = {0.08, 0.12, 0.0};
  Vector3d palm_standoff = {0.0, 0.0, 0.10};   // palm relative to object at grasp
  double lift_height = 0.25;
  double start_pose_noise = 0.3;               // rad on the rest pose
  double finger_closed_lo = 0.5, finger_closed_hi = 0.8;  // fraction of limit_hi
  double max_hand_speed = 1.5;                 // m/s cap on keypoint motion

  uint64_t rng_seed = 0;

  void validate() const;
};

std::vector<HandObjectClip> synth_clips(const SynthConfig& cfg);

/// Render a joint-space trajectory to a clip through the bindings: keypoint j
/// of every frame is binding j's world point. The object follows `palm_link`
/// rigidly from frame `attach_frame` on (< 0 keeps it static).
HandObjectClip clip_from_joint_motion(const KinematicChain& chain,
                                      const std::vector<KeypointBinding>& bindings,
                                      const std::vector<JointVector>& joint_trajectory,
                                      double fps, const RigidTransform& object_rest_pose,
                                      int palm_link, int attach_frame,
                                      const Eigen::Matrix<double, Eigen::Dynamic, 3>&
                                          object_points);

/// Minimum-jerk interpolation between two joint vectors, s in [0, 1].
JointVector min_jerk(const JointVector& a, const JointVector& b, double s);

}  // namespace hop
