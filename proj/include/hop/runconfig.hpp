#pragma once

#include <memory>

#include "hop/bc.hpp"
#include "hop/ppo.hpp"
#include "hop/retarget.hpp"
#include "hop/synth.hpp"

namespace hop {

/// One structured document configuring the whole pipeline. Every field has a
/// default except the seed; unknown keys are rejected. The raw text and its
/// hash are echoed into every artifact this run produces.
struct RunConfig {
  uint64_t seed = 0;
  std::string chain_path;
  std::shared_ptr<KinematicChain> chain;
  std::vector<KeypointBinding> bindings;

  Scene scene;  // chain pointer filled in
  RetargetProblem problem;
  RetargetConfig retarget;
  SynthConfig synth;
  TransformerConfig model;
  PretrainConfig pretrain;
  BcConfig bc;
  ToyTaskConfig task;
  PPOConfig rl;

  std::string raw_text;
  std::string config_hash;
};

RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const std::string& json_text,
                           const std::string& base_dir);

/// FNV-1a over the canonical dump; stable across key order in the source.
std::string hash_config_text(const std::string& json_text);

/// Default keypoint bindings for a chain: a palm anchor at double weight and
/// five fingertip keypoints mapped onto the links named "*_tip" (the last tip
/// absorbs leftover keypoints when the hand has fewer than five fingers).
std::vector<KeypointBinding> default_bindings(const KinematicChain& chain);

}  // namespace hop
