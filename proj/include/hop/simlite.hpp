#pragma once

#include <optional>
#include <vector>

#include "hop/kinematics.hpp"
#include "hop/rng.hpp"

namespace hop {

/// Per-joint PD gains. kd^2 >= 4 kp keeps each joint critically or over
/// damped; `is_well_damped` reports violations.
struct PDGains {
  Eigen::VectorXd kp;  // s^-2
  Eigen::VectorXd kd;  // s^-1

  static PDGains uniform(int dof, double kp_val = 100.0, double kd_val = 20.0) {
    PDGains g;
    g.kp = Eigen::VectorXd::Constant(dof, kp_val);
    g.kd = Eigen::VectorXd::Constant(dof, kd_val);
    return g;
  }

  bool is_well_damped() const {
    for (int i = 0; i < kp.size(); ++i)
      if (kd[i] * kd[i] < 4.0 * kp[i]) return false;
    return true;
  }

  void validate(int dof) const {
    if (kp.size() != dof || kd.size() != dof)
      throw std::invalid_argument("PD gains have wrong dimension");
    if ((kp.array() <= 0).any() || (kd.array() <= 0).any())
      throw std::invalid_argument("PD gains must be positive");
  }
};

/// Static scene: floor plane z = 0, one axis-aligned table box, and the
/// robot chain. dt is the control period (default 20 Hz).
struct Scene {
  const KinematicChain* chain = nullptr;
  Aabb table;
  bool has_table = true;
  PDGains gains;
  double dt = 0.05;

  void validate() const {
    if (!chain) throw std::invalid_argument("scene has no chain");
    if (!(dt > 0)) throw std::invalid_argument("scene dt must be > 0");
    gains.validate(chain->dof());
    if (has_table && table.center.z() - table.half_extents.z() < -1e-9)
      throw std::invalid_argument("table extends below the floor");
  }
};

struct SimState {
  JointVector q;
  Eigen::VectorXd qdot;
  RigidTransform object_pose;
  int step_index = 0;
};

struct Observation {
  Eigen::VectorXd proprio;             // joint angles, radians
  Eigen::Matrix<double, Eigen::Dynamic, 3> object_points;  // base frame, meters
};

struct CollisionPair {
  int link = 0;
  int obstacle = 0;  // 0 = floor, 1 = table
  double penetration = 0.0;
};

struct CollisionReport {
  bool any = false;
  std::vector<CollisionPair> pairs;
};

/// Lightweight simulator: PD joint dynamics integrated with semi-implicit
/// Euler, kinematic object playback, capsule-vs-floor/table collision tests
/// and object point-cloud observations. Single-owner, mutated in place.
class Simulator {
 public:
  explicit Simulator(const Scene& scene);

  const Scene& scene() const { return scene_; }
  const SimState& state() const { return state_; }

  void reset(const JointVector& q0, const RigidTransform& object_pose);

  /// One PD step toward `action` (clamped to limits first). Joint positions
  /// are clamped to limits afterwards with velocity zeroed at the stop.
  void step(const JointVector& action);

  /// Kinematic object playback; no dynamics.
  void set_object_pose(const RigidTransform& pose);

  CollisionReport check_collision() const;

  /// Samples n_points of the object surface set (with replacement when the
  /// set is smaller) and maps them through the current object pose.
  Observation observe(const Eigen::Matrix<double, Eigen::Dynamic, 3>& surface_points,
                      int n_points, Rng& rng) const;

 private:
  Scene scene_;
  SimState state_;
};

/// Collision report for an arbitrary configuration (used by retargeting,
/// which checks solved actions rather than a live simulator state).
CollisionReport check_collision(const Scene& scene, const JointVector& q);

}  // namespace hop
