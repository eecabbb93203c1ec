#pragma once

#include <string>
#include <vector>

#include "hop/simlite.hpp"

namespace hop {

struct TrajectoryStep {
  Observation obs;
  JointVector action;
};

struct TrajectoryMeta {
  std::string clip_id;
  uint64_t seed = 0;
  double max_error = 0.0;
  std::string scene_summary;
};

/// Sequence of (observation, action) pairs, the pretraining record.
struct SensorimotorTrajectory {
  std::vector<TrajectoryStep> steps;
  TrajectoryMeta meta;

  int length() const { return static_cast<int>(steps.size()); }
  int dof() const { return steps.empty() ? 0 : static_cast<int>(steps.front().action.size()); }
  int n_points() const {
    return steps.empty() ? 0 : static_cast<int>(steps.front().obs.object_points.rows());
  }
};

}  // namespace hop
