#pragma once

#include <optional>

#include "hop/policy.hpp"

namespace hop {

/// Optimizer state and provenance carried alongside the parameters.
struct CheckpointState {
  bool has_optimizer = false;
  int64_t step = 0;
  std::vector<std::vector<float>> first_moments, second_moments;  // param order
  std::string config_echo;  // verbatim run config
  std::string config_hash;
  uint64_t seed = 0;
  std::vector<std::string> inputs;
};

template <typename S>
void save_checkpoint(const PolicyNet<S>& net, const std::string& path,
                     const CheckpointState& state = {});

template <typename S>
PolicyNet<S> load_checkpoint(const std::string& path,
                             CheckpointState* state_out = nullptr);

/// Error with the offending field name when the checkpoint disagrees with
/// the dataset/config dimensions.
template <typename S>
void check_checkpoint_compatible(const PolicyNet<S>& net, int dof, int n_points);

}  // namespace hop
