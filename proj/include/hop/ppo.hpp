#pragma once

#include <deque>
#include <optional>

#include "hop/pretrain.hpp"
#include "hop/toytask.hpp"

namespace hop {

struct PPOConfig {
  double clip = 0.2;
  double gae_gamma = 0.99;
  double gae_lambda = 0.95;
  int epochs = 4;
  int minibatches = 4;
  int rollout_steps = 128;  // per env, between updates
  int n_envs = 8;
  int value_warmup_steps = 200;   // gradient steps with the actor frozen
  double init_action_std = 0.1;   // normalized action units
  double entropy_coef = 0.0;
  double vf_coef = 0.5;
  double lr = 3e-4;
  bool learn_std = true;
  bool tokenizer_grad_from_critic = false;  // kept false: critic path is severed
  bool moving_average_actions = false;      // from-scratch baseline wrapper
  double ma_beta = 0.8;
  int64_t max_env_steps = 120000;
  uint64_t seed = 0;
  int success_window = 25;       // rolling episodes for the curve
  double target_success = 0.5;   // curve threshold-crossing bookkeeping

  void validate() const {
    if (!(clip > 0 && clip < 1)) throw std::invalid_argument("clip in (0,1) required");
    if (value_warmup_steps < 0) throw std::invalid_argument("warmup must be >= 0");
    if (n_envs < 1 || rollout_steps < 1 || epochs < 1 || minibatches < 1)
      throw std::invalid_argument("invalid ppo config");
  }
};

/// Generalized advantage estimation. `dones[t]` masks the bootstrap between
/// t and t+1; `bootstrap_value` stands in for V at the step after the last.
void gae(const std::vector<double>& rewards, const std::vector<double>& values,
         const std::vector<uint8_t>& dones, double gamma, double lam,
         double bootstrap_value, std::vector<double>* advantages,
         std::vector<double>* returns);

/// One rollout sample: the observation window at decision time, the sampled
/// (normalized) action and its advantage/return targets.
struct PPOSample {
  std::vector<Observation> window;
  Eigen::VectorXd action_norm;
  double advantage = 0.0;
  double ret = 0.0;
};

struct PPOUpdateStats {
  double pi_loss = 0.0;
  double value_loss = 0.0;
  double mean_ratio = 0.0;
  double first_ratio_error = 0.0;  // max |ratio - 1| over the first minibatch
};

/// Actor-critic wrapper around a PolicyNet: adds the value head and a
/// state-independent learnable Gaussian log-std (initialized to
/// ln(init_action_std)). The critic shares tokenizers and trunk but its
/// gradients never reach the tokenizers; during the first
/// `value_warmup_steps` gradient steps only the value head is updated.
class PPOTrainer {
 public:
  PPOTrainer(PolicyNet<float> net, const PPOConfig& cfg);

  PolicyNet<float>& net() { return net_; }
  const PolicyNet<float>& net() const { return net_; }
  grad::Tensor<float>& log_std() { return log_std_; }
  double mean_std() const;
  int64_t gradient_steps() const { return gradient_steps_; }

  /// Gaussian action means (normalized) and values for a batch of windows.
  struct Decision {
    Eigen::MatrixXd mean;   // [n x dof]
    Eigen::VectorXd value;  // [n]
  };
  Decision decide(const std::vector<std::vector<const Observation*>>& windows);

  double log_prob(const Eigen::VectorXd& mean, const Eigen::VectorXd& action) const;

  /// One full PPO update cycle (epochs x minibatches) over the samples.
  /// Advantages are normalized over the batch; log-probs under the old
  /// parameters are evaluated at entry through the same forward path the
  /// update uses.
  PPOUpdateStats update(const std::vector<PPOSample>& samples);

 private:
  PolicyNet<float> net_;
  PPOConfig cfg_;
  grad::Tensor<float> log_std_;
  std::vector<grad::Tensor<float>> actor_params_, value_params_;
  std::optional<grad::AdamW<float>> opt_actor_, opt_value_;
  int64_t gradient_steps_ = 0;
  Rng rng_;
};

struct RLCurvePoint {
  int64_t env_steps = 0;
  double mean_return = 0.0;
  double success_rate = 0.0;
  double policy_std = 0.0;
  // Diagnostics (not part of the curve CSV schema).
  double grasp_rate = 0.0;      // episodes with any attachment
  double collision_rate = 0.0;  // episodes ended by collision
  double mean_episode_len = 0.0;
};

struct TrainRLResult {
  PolicyNet<float> net;
  std::vector<RLCurvePoint> curve;
  int64_t steps_to_target = -1;  // env steps at first crossing, -1 if never
  bool mask_object = false;
};

/// Alternating rollout collection over n_envs simulator instances and PPO
/// updates, until max_env_steps. `init` continues from a pretrained policy
/// (its mask_object flag is honored); otherwise a fresh net is initialized
/// with limit-derived normalization.
TrainRLResult train_rl(std::optional<PolicyNet<float>> init,
                       const TransformerConfig& fresh_cfg, const Scene& scene,
                       const ToyTaskConfig& tcfg, const PPOConfig& cfg);

struct EvalResult {
  double success_rate = 0.0;
  double mean_return = 0.0;
};

/// Deterministic evaluation (mean action), seeded episodes.
EvalResult evaluate(const PolicyNet<float>& net, const Scene& scene,
                    const ToyTaskConfig& tcfg, int n_episodes, uint64_t seed,
                    bool moving_average_actions = false, double ma_beta = 0.8);

/// Uniform-random action baseline on the same episode distribution.
EvalResult evaluate_random(const Scene& scene, const ToyTaskConfig& tcfg,
                           int n_episodes, uint64_t seed);

std::string rl_curve_to_csv(const std::vector<RLCurvePoint>& curve);

}  // namespace hop
