#pragma once

#include <string>
#include <vector>

#include "hop/geometry.hpp"

namespace hop {

using JointVector = Eigen::VectorXd;

/// One revolute joint. `parent_link` is the index of the parent link
/// (-1 for the fixed base). `origin` is the joint frame in the parent link
/// frame; the joint rotates about `axis` (unit vector, joint frame).
struct JointSpec {
  std::string name;
  int parent_link = -1;
  Vector3d axis = Vector3d::UnitZ();
  RigidTransform origin;
  double limit_lo = 0.0;
  double limit_hi = 0.0;
};

/// Link i is the child of joint i and carries one collision capsule.
struct LinkSpec {
  std::string name;
  Capsule capsule;
};

/// Serial kinematic chain of revolute joints. Immutable after construction;
/// all member functions are const and safe to call concurrently.
class KinematicChain {
 public:
  KinematicChain(std::string name, std::vector<JointSpec> joints,
                 std::vector<LinkSpec> links);

  const std::string& name() const { return name_; }
  int dof() const { return static_cast<int>(joints_.size()); }
  const std::vector<JointSpec>& joints() const { return joints_; }
  const std::vector<LinkSpec>& links() const { return links_; }

  /// Index of the named link, or -1.
  int link_index(const std::string& name) const;

  JointVector rest_pose() const { return JointVector::Zero(dof()); }

  JointVector lower_limits() const;
  JointVector upper_limits() const;

  /// Pose of every link in the base frame. Link i depends only on joints
  /// along its ancestor path.
  std::vector<RigidTransform> forward_kinematics(const JointVector& q) const;

  JointVector clamp_to_limits(const JointVector& q) const;

  bool within_limits(const JointVector& q, double tol = 0.0) const;

  /// True if joint j moves link `link` (j lies on the ancestor path).
  bool is_ancestor(int joint, int link) const;

 private:
  std::string name_;
  std::vector<JointSpec> joints_;
  std::vector<LinkSpec> links_;
};

/// Correspondence between a clip hand keypoint and a point fixed in a robot
/// link frame (-1 binds to the fixed base). Weights scale the matching term
/// of the retargeting cost.
struct KeypointBinding {
  int hand_keypoint_index = 0;
  int link = 0;
  Vector3d local_offset = Vector3d::Zero();
  double weight = 1.0;
};

void validate_bindings(const KinematicChain& chain,
                       const std::vector<KeypointBinding>& bindings);

/// World positions of the bound points, one per binding.
std::vector<Vector3d> keypoint_positions(
    const KinematicChain& chain, const JointVector& q,
    const std::vector<KeypointBinding>& bindings);

/// As above, reusing precomputed link poses.
std::vector<Vector3d> keypoint_positions(
    const std::vector<RigidTransform>& link_poses,
    const std::vector<KeypointBinding>& bindings);

/// Geometric Jacobian of the stacked binding points, (3*|bindings|) x dof.
/// Column i for point p: axis_world_i x (p - joint_origin_world_i) when
/// joint i is an ancestor of the binding link, else zero.
Eigen::MatrixXd keypoint_jacobian(const KinematicChain& chain,
                                  const JointVector& q,
                                  const std::vector<KeypointBinding>& bindings);

/// Parse a chain description document (JSON text, see docs/formats).
/// Rejects inverted limits, non-unit axes and non-tree parent graphs.
KinematicChain load_chain_from_string(const std::string& json_text);
KinematicChain load_chain(const std::string& path);

/// Serialize back to the chain-description format.
std::string chain_to_json(const KinematicChain& chain);

}  // namespace hop
