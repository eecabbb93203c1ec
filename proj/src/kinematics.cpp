#include "hop/kinematics.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace hop {

using nlohmann::json;

KinematicChain::KinematicChain(std::string name, std::vector<JointSpec> joints,
                               std::vector<LinkSpec> links)
    : name_(std::move(name)), joints_(std::move(joints)), links_(std::move(links)) {
  if (joints_.empty()) throw std::invalid_argument("chain has no joints");
  if (links_.size() != joints_.size())
    throw std::invalid_argument("chain needs one link per joint");
  for (size_t i = 0; i < joints_.size(); ++i) {
    const auto& j = joints_[i];
    if (j.parent_link < -1 || j.parent_link >= static_cast<int>(i))
      throw std::invalid_argument("joint '" + j.name +
                                  "': parent graph is not a tree rooted at the base");
    if (std::abs(j.axis.norm() - 1.0) > 1e-9)
      throw std::invalid_argument("joint '" + j.name + "': axis is not unit length");
    if (j.limit_lo > j.limit_hi)
      throw std::invalid_argument("joint '" + j.name + "': inverted limits");
    if (!j.origin.is_finite() || j.origin.orthonormality_error() > 1e-9)
      throw std::invalid_argument("joint '" + j.name + "': origin rotation not orthonormal");
  }
}

int KinematicChain::link_index(const std::string& name) const {
  for (size_t i = 0; i < links_.size(); ++i)
    if (links_[i].name == name) return static_cast<int>(i);
  return -1;
}

JointVector KinematicChain::lower_limits() const {
  JointVector lo(dof());
  for (int i = 0; i < dof(); ++i) lo[i] = joints_[i].limit_lo;
  return lo;
}

JointVector KinematicChain::upper_limits() const {
  JointVector hi(dof());
  for (int i = 0; i < dof(); ++i) hi[i] = joints_[i].limit_hi;
  return hi;
}

std::vector<RigidTransform> KinematicChain::forward_kinematics(
    const JointVector& q) const {
  if (q.size() != dof())
    throw std::invalid_argument("forward_kinematics: q has wrong dimension");
  std::vector<RigidTransform> poses(joints_.size());
  for (size_t i = 0; i < joints_.size(); ++i) {
    const auto& j = joints_[i];
    const RigidTransform parent =
        j.parent_link < 0 ? RigidTransform::identity() : poses[j.parent_link];
    RigidTransform joint_frame = parent * j.origin;
    RigidTransform rot;
    rot.rotation = axis_angle(j.axis, q[static_cast<int>(i)]);
    poses[i] = joint_frame * rot;
  }
  return poses;
}

JointVector KinematicChain::clamp_to_limits(const JointVector& q) const {
  if (q.size() != dof())
    throw std::invalid_argument("clamp_to_limits: q has wrong dimension");
  JointVector out = q;
  for (int i = 0; i < dof(); ++i)
    out[i] = std::clamp(q[i], joints_[i].limit_lo, joints_[i].limit_hi);
  return out;
}

bool KinematicChain::within_limits(const JointVector& q, double tol) const {
  for (int i = 0; i < dof(); ++i)
    if (q[i] < joints_[i].limit_lo - tol || q[i] > joints_[i].limit_hi + tol)
      return false;
  return true;
}

bool KinematicChain::is_ancestor(int joint, int link) const {
  int l = link;
  while (l >= 0) {
    if (l == joint) return true;
    l = joints_[l].parent_link;
  }
  return false;
}

void validate_bindings(const KinematicChain& chain,
                       const std::vector<KeypointBinding>& bindings) {
  if (bindings.empty()) throw std::invalid_argument("bindings are empty");
  for (const auto& b : bindings) {
    if (b.link < -1 || b.link >= chain.dof())
      throw std::invalid_argument("binding references invalid link index " +
                                  std::to_string(b.link));
    if (b.hand_keypoint_index < 0)
      throw std::invalid_argument("binding has negative keypoint index");
    if (!(b.weight >= 0.0))
      throw std::invalid_argument("binding weight must be >= 0");
  }
}

std::vector<Vector3d> keypoint_positions(
    const std::vector<RigidTransform>& link_poses,
    const std::vector<KeypointBinding>& bindings) {
  std::vector<Vector3d> out;
  out.reserve(bindings.size());
  for (const auto& b : bindings) {
    if (b.link < -1 || b.link >= static_cast<int>(link_poses.size()))
      throw std::invalid_argument("binding references invalid link index");
    out.push_back(b.link < 0 ? b.local_offset
                             : link_poses[b.link].apply(b.local_offset));
  }
  return out;
}

std::vector<Vector3d> keypoint_positions(
    const KinematicChain& chain, const JointVector& q,
    const std::vector<KeypointBinding>& bindings) {
  return keypoint_positions(chain.forward_kinematics(q), bindings);
}

Eigen::MatrixXd keypoint_jacobian(const KinematicChain& chain,
                                  const JointVector& q,
                                  const std::vector<KeypointBinding>& bindings) {
  const auto poses = chain.forward_kinematics(q);
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(3 * bindings.size(), chain.dof());

  // World frame of each joint before its own rotation: parent_pose * origin.
  std::vector<Vector3d> joint_origin(chain.dof()), joint_axis(chain.dof());
  for (int i = 0; i < chain.dof(); ++i) {
    const auto& j = chain.joints()[i];
    const RigidTransform parent =
        j.parent_link < 0 ? RigidTransform::identity() : poses[j.parent_link];
    const RigidTransform frame = parent * j.origin;
    joint_origin[i] = frame.translation;
    joint_axis[i] = frame.rotation * j.axis;
  }

  for (size_t k = 0; k < bindings.size(); ++k) {
    const auto& b = bindings[k];
    if (b.link < -1 || b.link >= chain.dof())
      throw std::invalid_argument("binding references invalid link index");
    if (b.link < 0) continue;  // base-bound points never move
    const Vector3d p = poses[b.link].apply(b.local_offset);
    for (int i = 0; i < chain.dof(); ++i) {
      if (!chain.is_ancestor(i, b.link)) continue;
      jac.block<3, 1>(3 * k, i) = joint_axis[i].cross(p - joint_origin[i]);
    }
  }
  return jac;
}

namespace {

Vector3d parse_vec3(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3)
    throw std::invalid_argument(what + ": expected [x, y, z]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

RigidTransform parse_origin(const json& j) {
  RigidTransform t;
  if (j.contains("pos")) t.translation = parse_vec3(j.at("pos"), "origin.pos");
  if (j.contains("quat")) {
    const auto& q = j.at("quat");
    if (!q.is_array() || q.size() != 4)
      throw std::invalid_argument("origin.quat: expected [w, x, y, z]");
    t = RigidTransform::from_quat(t.translation, q[0].get<double>(),
                                  q[1].get<double>(), q[2].get<double>(),
                                  q[3].get<double>());
  }
  return t;
}

}  // namespace

KinematicChain load_chain_from_string(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("chain document is not valid JSON: ") +
                                e.what());
  }
  if (!doc.contains("joints") || !doc.at("joints").is_array())
    throw std::invalid_argument("chain document: missing joints[]");

  std::vector<JointSpec> joints;
  for (const auto& jj : doc.at("joints")) {
    JointSpec spec;
    spec.name = jj.at("name").get<std::string>();
    spec.parent_link = jj.at("parent").get<int>();
    spec.axis = parse_vec3(jj.at("axis"), "joint axis");
    spec.origin = parse_origin(jj.at("origin"));
    const auto& lim = jj.at("limits");
    if (!lim.is_array() || lim.size() != 2)
      throw std::invalid_argument("joint '" + spec.name + "': limits must be [lo, hi]");
    spec.limit_lo = lim[0].get<double>();
    spec.limit_hi = lim[1].get<double>();
    if (spec.limit_lo > spec.limit_hi)
      throw std::invalid_argument("joint '" + spec.name + "': inverted limits");
    joints.push_back(spec);
  }

  std::vector<LinkSpec> links;
  if (!doc.contains("links") || !doc.at("links").is_array())
    throw std::invalid_argument("chain document: missing links[]");
  for (const auto& lj : doc.at("links")) {
    LinkSpec link;
    link.name = lj.at("name").get<std::string>();
    const auto& c = lj.at("capsule");
    link.capsule.p0 = parse_vec3(c.at("p0"), "capsule.p0");
    link.capsule.p1 = parse_vec3(c.at("p1"), "capsule.p1");
    link.capsule.radius = c.at("radius").get<double>();
    if (!(link.capsule.radius >= 0.0))
      throw std::invalid_argument("link '" + link.name + "': negative capsule radius");
    links.push_back(link);
  }

  return KinematicChain(doc.value("name", std::string("chain")), std::move(joints),
                        std::move(links));
}

KinematicChain load_chain(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open chain file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return load_chain_from_string(ss.str());
}

std::string chain_to_json(const KinematicChain& chain) {
  json doc;
  doc["name"] = chain.name();
  doc["joints"] = json::array();
  for (const auto& j : chain.joints()) {
    const auto q = j.origin.quat_wxyz();
    doc["joints"].push_back(
        {{"name", j.name},
         {"parent", j.parent_link},
         {"axis", {j.axis.x(), j.axis.y(), j.axis.z()}},
         {"origin",
          {{"pos",
            {j.origin.translation.x(), j.origin.translation.y(), j.origin.translation.z()}},
           {"quat", {q[0], q[1], q[2], q[3]}}}},
         {"limits", {j.limit_lo, j.limit_hi}}});
  }
  doc["links"] = json::array();
  for (const auto& l : chain.links()) {
    doc["links"].push_back(
        {{"name", l.name},
         {"capsule",
          {{"p0", {l.capsule.p0.x(), l.capsule.p0.y(), l.capsule.p0.z()}},
           {"p1", {l.capsule.p1.x(), l.capsule.p1.y(), l.capsule.p1.z()}},
           {"radius", l.capsule.radius}}}});
  }
  return doc.dump(2);
}

}  // namespace hop
