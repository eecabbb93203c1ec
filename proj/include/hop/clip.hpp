#pragma once

#include <optional>
#include <string>
#include <vector>

#include "hop/geometry.hpp"

namespace hop {

/// One frame of an ingested hand-object clip. Hand keypoints and object pose
/// are expressed in the robot base frame (after `base_from_clip`, if any).
struct ClipFrame {
  Eigen::Matrix<double, Eigen::Dynamic, 3> hand_keypoints;  // K x 3, meters
  RigidTransform object_pose;
  std::optional<Eigen::Matrix<double, Eigen::Dynamic, 3>> object_points;  // P x 3, object frame
};

/// A 3D hand-object trajectory, the unit of ingested data.
struct HandObjectClip {
  double fps = 0.0;
  std::string source;
  std::vector<ClipFrame> frames;

  int n_keypoints() const {
    return frames.empty() ? 0 : static_cast<int>(frames.front().hand_keypoints.rows());
  }
  void validate() const;
};

HandObjectClip load_clip_from_string(const std::string& json_text);
HandObjectClip load_clip(const std::string& path);
std::string clip_to_json(const HandObjectClip& clip);
void save_clip(const HandObjectClip& clip, const std::string& path);

}  // namespace hop
