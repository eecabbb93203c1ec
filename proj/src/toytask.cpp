#include "hop/toytask.hpp"

namespace hop {

ToyTask::ToyTask(const Scene& scene, ToyTaskConfig cfg)
    : scene_(scene), cfg_(std::move(cfg)) {
  scene_.validate();
  const auto& chain = *scene_.chain;
  if (cfg_.arm_dof < 1 || cfg_.arm_dof >= chain.dof())
    throw std::invalid_argument("toy task: arm_dof out of range");
  if (cfg_.palm_link < 0 || cfg_.palm_link >= chain.dof())
    throw std::invalid_argument("toy task: palm_link out of range");
  for (int l : cfg_.fingertip_links)
    if (l < 0 || l >= chain.dof())
      throw std::invalid_argument("toy task: fingertip link out of range");
  if (cfg_.horizon < 1) throw std::invalid_argument("toy task: horizon must be >= 1");
  surface_ = object_surface_points(cfg_.object, 0xb0c1d2e3ull);
  sim_.emplace(scene_);
}

Observation ToyTask::reset(Rng& rng) {
  episode_rng_ = Rng(rng.next_u64());
  const auto& chain = *scene_.chain;

  // Rejection-sample the initial joints from the valid (collision-free)
  // subset of rest + U(-noise, noise).
  JointVector q = chain.rest_pose();
  for (int attempt = 0; attempt < 200; ++attempt) {
    q = chain.rest_pose();
    for (int i = 0; i < q.size(); ++i)
      q[i] += episode_rng_.uniform(-cfg_.reset_noise, cfg_.reset_noise);
    q = chain.clamp_to_limits(q);
    if (!hop::check_collision(scene_, q).any) break;
  }

  RigidTransform obj;
  obj.rotation =
      axis_angle(Vector3d::UnitZ(), episode_rng_.uniform(0, 2 * M_PI));
  obj.translation = cfg_.object_center;
  for (int i = 0; i < 3; ++i)
    obj.translation[i] +=
        episode_rng_.uniform(-cfg_.object_jitter[i], cfg_.object_jitter[i]);

  sim_->reset(q, obj);
  attached_ = false;
  object_z0_ = obj.translation.z();
  steps_ = 0;
  done_ = false;
  return observe();
}

Observation ToyTask::observe() {
  return sim_->observe(surface_, cfg_.n_points, episode_rng_);
}

Vector3d ToyTask::palm_point() const {
  const auto poses = scene_.chain->forward_kinematics(sim_->state().q);
  return poses[cfg_.palm_link].apply(cfg_.palm_offset);
}

double ToyTask::reach_distance() const {
  return (palm_point() - sim_->state().object_pose.translation).norm();
}

double ToyTask::object_height_gain() const {
  return sim_->state().object_pose.translation.z() - object_z0_;
}

double ToyTask::finger_closure() const {
  const auto& chain = *scene_.chain;
  double closure = 0.0;
  int n = 0;
  for (int i = cfg_.arm_dof; i < chain.dof(); ++i) {
    closure += sim_->state().q[i] / std::max(1e-9, chain.joints()[i].limit_hi);
    ++n;
  }
  return closure / std::max(1, n);
}

bool ToyTask::grasp_predicate() const {
  const auto& chain = *scene_.chain;
  const auto poses = chain.forward_kinematics(sim_->state().q);
  const Vector3d obj = sim_->state().object_pose.translation;
  for (int l : cfg_.fingertip_links) {
    if ((poses[l].apply(cfg_.fingertip_offset) - obj).norm() > cfg_.grasp_radius)
      return false;
  }
  double closure = 0.0, opening_rate = 0.0;
  int n = 0;
  for (int i = cfg_.arm_dof; i < chain.dof(); ++i) {
    closure += sim_->state().q[i] / std::max(1e-9, chain.joints()[i].limit_hi);
    opening_rate = std::min(opening_rate, sim_->state().qdot[i]);
    ++n;
  }
  closure /= std::max(1, n);
  return closure >= cfg_.finger_close_frac && opening_rate > -0.2;
}

ToyTask::StepResult ToyTask::step(const JointVector& action) {
  if (done_) throw std::logic_error("toy task: step after episode end");
  const auto& chain = *scene_.chain;

  sim_->step(action);
  ++steps_;

  // Attachment bookkeeping.
  if (!attached_) {
    if (grasp_predicate()) {
      attached_ = true;
      const auto poses = chain.forward_kinematics(sim_->state().q);
      object_from_palm_ = poses[cfg_.palm_link].inverse() * sim_->state().object_pose;
    }
  } else {
    double closure = 0.0;
    int n = 0;
    for (int i = cfg_.arm_dof; i < chain.dof(); ++i) {
      closure += sim_->state().q[i] / std::max(1e-9, chain.joints()[i].limit_hi);
      ++n;
    }
    if (closure / std::max(1, n) < cfg_.release_frac) {
      attached_ = false;  // fingers opened; drop back to the release height
    }
  }
  if (attached_) {
    const auto poses = chain.forward_kinematics(sim_->state().q);
    sim_->set_object_pose(poses[cfg_.palm_link] * object_from_palm_);
  }

  StepResult res;
  res.collided = hop::check_collision(scene_, sim_->state().q).any;

  const double reach = reach_distance();
  res.reward = cfg_.alive_bonus - cfg_.w_reach * reach;
  if (reach < cfg_.close_shaping_radius)
    res.reward += cfg_.w_close * std::clamp(finger_closure(), 0.0, 1.0);
  if (attached_) {
    res.reward += cfg_.grasp_bonus;
    res.reward +=
        cfg_.w_lift * std::clamp(object_height_gain(), 0.0, cfg_.lift_threshold);
  }
  res.success = attached_ && object_height_gain() >= cfg_.lift_threshold;
  if (res.success) res.reward += cfg_.success_bonus;
  if (res.collided) res.reward -= cfg_.collision_penalty;

  if (res.success || (res.collided && cfg_.terminate_on_collision)) {
    res.done = true;
  } else if (steps_ >= cfg_.horizon) {
    res.truncated = true;
  }
  done_ = res.done || res.truncated;
  if (!std::isfinite(res.reward)) throw std::runtime_error("toy task: non-finite reward");
  return res;
}

NormStats stats_from_limits(const KinematicChain& chain) {
  // Centered on the rest pose so an untrained net commands a hold-still
  // action rather than a lurch to the box midpoint.
  NormStats s;
  const auto lo = chain.lower_limits(), hi = chain.upper_limits();
  s.proprio_mean = chain.clamp_to_limits(chain.rest_pose());
  s.proprio_std = ((hi - lo) / 4.0).cwiseMax(1e-3);
  s.action_mean = s.proprio_mean;
  s.action_std = s.proprio_std;
  return s;
}

}  // namespace hop
