#pragma once

#include <functional>
#include <optional>

#include "hop/checkpoint.hpp"

namespace hop {

struct PretrainConfig {
  double lr = 1e-4;
  double weight_decay = 1e-2;
  int batch_size = 128;
  int steps = 9000;
  bool mask_object = false;
  uint64_t seed = 0;
  int eval_interval = 200;
  int checkpoint_interval = 0;  // 0 disables periodic checkpoints
  bool keep_best = false;       // restore the best-validation parameters at the end
  int max_eval_windows = 256;

  void validate() const {
    if (!(lr > 0)) throw std::invalid_argument("lr must be > 0");
    if (batch_size < 1 || steps < 0)
      throw std::invalid_argument("invalid pretrain config");
  }
};

struct CurvePoint {
  int64_t step = 0;
  double train_l1 = 0.0;
  double val_l1 = 0.0;
};

struct PretrainResult {
  PolicyNet<float> net;
  std::vector<CurvePoint> curve;
  double final_train_l1 = 0.0;
  double best_val_l1 = 0.0;
  int64_t best_step = 0;
};

/// Next-action prediction on random observation windows: mean L1 between
/// predicted and recorded actions over every valid window position, AdamW
/// updates, periodic validation. Deterministic given the seed.
/// When `init` is set, training continues from those parameters and their
/// normalization stats (the behavior-cloning path); otherwise a fresh net is
/// initialized and stats are computed from the training set.
PretrainResult pretrain(
    const std::vector<SensorimotorTrajectory>& train,
    const std::vector<SensorimotorTrajectory>& val, const TransformerConfig& cfg,
    const PretrainConfig& pcfg, std::optional<PolicyNet<float>> init = std::nullopt,
    const std::function<void(int64_t, const PolicyNet<float>&)>& on_checkpoint = {});

/// Mean L1 of the net on windows drawn deterministically from `set`.
double eval_l1(const PolicyNet<float>& net,
               const std::vector<SensorimotorTrajectory>& set, int max_windows,
               uint64_t seed);

std::string curve_to_csv(const std::vector<CurvePoint>& curve);

}  // namespace hop
