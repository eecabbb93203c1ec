#include "hop/simlite.hpp"

namespace hop {

Simulator::Simulator(const Scene& scene) : scene_(scene) {
  scene_.validate();
  state_.q = scene_.chain->rest_pose();
  state_.qdot = Eigen::VectorXd::Zero(scene_.chain->dof());
  state_.object_pose = RigidTransform::identity();
  state_.step_index = 0;
}

void Simulator::reset(const JointVector& q0, const RigidTransform& object_pose) {
  state_.q = scene_.chain->clamp_to_limits(q0);
  state_.qdot.setZero();
  set_object_pose(object_pose);
  state_.step_index = 0;
}

void Simulator::step(const JointVector& action) {
  const auto& chain = *scene_.chain;
  if (action.size() != chain.dof())
    throw std::invalid_argument("step: action has wrong dimension");
  const JointVector a = chain.clamp_to_limits(action);

  const double dt = scene_.dt;
  const Eigen::VectorXd qddot = scene_.gains.kp.cwiseProduct(a - state_.q) -
                                scene_.gains.kd.cwiseProduct(state_.qdot);
  state_.qdot += dt * qddot;
  state_.q += dt * state_.qdot;

  for (int i = 0; i < chain.dof(); ++i) {
    const auto& j = chain.joints()[i];
    if (state_.q[i] <= j.limit_lo) {
      state_.q[i] = j.limit_lo;
      if (state_.qdot[i] < 0) state_.qdot[i] = 0;
    } else if (state_.q[i] >= j.limit_hi) {
      state_.q[i] = j.limit_hi;
      if (state_.qdot[i] > 0) state_.qdot[i] = 0;
    }
  }
  if (!state_.q.allFinite() || !state_.qdot.allFinite())
    throw std::runtime_error("simulator state became non-finite");
  ++state_.step_index;
}

void Simulator::set_object_pose(const RigidTransform& pose) {
  if (!pose.is_finite())
    throw std::invalid_argument("set_object_pose: non-finite pose");
  state_.object_pose = pose;
}

CollisionReport check_collision(const Scene& scene, const JointVector& q) {
  CollisionReport report;
  const auto poses = scene.chain->forward_kinematics(q);
  for (size_t i = 0; i < poses.size(); ++i) {
    const Capsule& c = scene.chain->links()[i].capsule;
    if (c.radius <= 0) continue;
    const Vector3d a = poses[i].apply(c.p0);
    const Vector3d b = poses[i].apply(c.p1);

    // Floor: plane z = 0; distance along the segment is min of the endpoints.
    const double min_z = std::min(a.z(), b.z());
    if (min_z < c.radius) {
      report.pairs.push_back({static_cast<int>(i), 0, c.radius - min_z});
    }
    if (scene.has_table) {
      const double d = segment_box_distance(a, b, scene.table);
      if (d < c.radius) {
        report.pairs.push_back({static_cast<int>(i), 1, c.radius - d});
      }
    }
  }
  report.any = !report.pairs.empty();
  return report;
}

CollisionReport Simulator::check_collision() const {
  return hop::check_collision(scene_, state_.q);
}

Observation Simulator::observe(
    const Eigen::Matrix<double, Eigen::Dynamic, 3>& surface_points, int n_points,
    Rng& rng) const {
  if (surface_points.rows() < 1)
    throw std::invalid_argument("observe: empty surface point set");
  if (n_points < 1) throw std::invalid_argument("observe: n_points must be >= 1");

  Observation obs;
  obs.proprio = state_.q;
  obs.object_points.resize(n_points, 3);
  const auto n_surface = static_cast<uint64_t>(surface_points.rows());
  for (int i = 0; i < n_points; ++i) {
    const auto idx = static_cast<Eigen::Index>(rng.uniform_int(n_surface));
    const Vector3d p = state_.object_pose.apply(surface_points.row(idx).transpose());
    obs.object_points.row(i) = p.transpose();
  }
  return obs;
}

}  // namespace hop
