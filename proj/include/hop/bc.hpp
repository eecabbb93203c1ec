#pragma once

#include "hop/pretrain.hpp"

namespace hop {

/// Behavior cloning on task demonstrations: the pretraining objective and
/// optimizer, batch 128 for 9000 steps by default, checkpoint every 1000,
/// best checkpoint by validation L1.
struct BcConfig {
  PretrainConfig base;
  double val_fraction = 0.1;
  BcConfig() {
    base.batch_size = 128;
    base.steps = 9000;
    base.checkpoint_interval = 1000;
    base.eval_interval = 250;
    base.keep_best = true;
  }
};

PretrainResult bc_finetune(
    std::optional<PolicyNet<float>> init,
    const std::vector<SensorimotorTrajectory>& demos, const TransformerConfig& cfg,
    const BcConfig& bcfg,
    const std::function<void(int64_t, const PolicyNet<float>&)>& on_checkpoint = {});

}  // namespace hop
