#pragma once

#include "hop/dataset.hpp"
#include "hop/simlite.hpp"
#include "hop/synth.hpp"

namespace hop {

/// Simulated grasp-and-lift environment. The object rests on the table until
/// the grasp predicate holds (all fingertips within grasp_radius of the
/// object center, fingers closed past a threshold and not opening), then
/// attaches rigidly to the palm. Success: the attached object gains
/// lift_threshold meters of height.
struct ToyTaskConfig {
  ObjectSpec object{ObjectSpec::Shape::kBox, {0.04, 0.04, 0.04}, 128};
  Vector3d object_center = {0.42, 0.0, 0.27};
  Vector3d object_jitter = {0.03, 0.05, 0.0};
  double lift_threshold = 0.15;
  double grasp_radius = 0.10;
  double finger_close_frac = 0.25;  // of limit_hi, to count as closed
  double release_frac = 0.12;
  int horizon = 60;
  double reset_noise = 0.3;  // rad, uniform, on the rest pose
  int n_points = 32;

  int arm_dof = 3;  // leading joints; the rest are fingers
  int palm_link = 2;
  Vector3d palm_offset = {0.10, 0.0, -0.065};
  std::vector<int> fingertip_links = {3, 4};
  Vector3d fingertip_offset = {0, 0, -0.09};

  double w_reach = 1.5;
  double alive_bonus = 0.55;          // keeps survival preferable to early termination
  double w_close = 0.3;               // finger-closing shaping
  double close_shaping_radius = 10.0; // effectively ungated by default
  double grasp_bonus = 1.0;
  double w_lift = 25.0;
  double success_bonus = 15.0;
  double collision_penalty = 2.0;
  bool terminate_on_collision = true;
};

class ToyTask {
 public:
  ToyTask(const Scene& scene, ToyTaskConfig cfg);

  struct StepResult {
    double reward = 0.0;
    bool done = false;       // terminal (success or collision)
    bool truncated = false;  // horizon reached
    bool success = false;
    bool collided = false;
  };

  /// Samples joints = rest + U(-noise, noise) and the object start pose.
  Observation reset(Rng& rng);
  StepResult step(const JointVector& action);

  Observation observe();
  const Scene& scene() const { return scene_; }
  const ToyTaskConfig& config() const { return cfg_; }
  const SimState& state() const { return sim_->state(); }
  bool grasped() const { return attached_; }
  double object_height_gain() const;

  /// Reward terms at the current state (exposed for shaping tests).
  double reach_distance() const;
  double finger_closure() const;

 private:
  Vector3d palm_point() const;
  bool grasp_predicate() const;

  Scene scene_;
  ToyTaskConfig cfg_;
  std::optional<Simulator> sim_;
  Eigen::Matrix<double, Eigen::Dynamic, 3> surface_;
  Rng episode_rng_{0};
  bool attached_ = false;
  RigidTransform object_from_palm_;
  double object_z0_ = 0.0;
  int steps_ = 0;
  bool done_ = false;
};

/// Normalization stats covering the full action box, for nets trained from
/// scratch (no dataset to take stats from).
NormStats stats_from_limits(const KinematicChain& chain);

}  // namespace hop
