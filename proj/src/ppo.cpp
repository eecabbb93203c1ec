#include "hop/ppo.hpp"

#include <iostream>
#include <sstream>

namespace hop {

void gae(const std::vector<double>& rewards, const std::vector<double>& values,
         const std::vector<uint8_t>& dones, double gamma, double lam,
         double bootstrap_value, std::vector<double>* advantages,
         std::vector<double>* returns) {
  const size_t n = rewards.size();
  if (values.size() != n || dones.size() != n)
    throw std::invalid_argument("gae: length mismatch");
  advantages->assign(n, 0.0);
  returns->assign(n, 0.0);
  double running = 0.0;
  for (size_t i = n; i-- > 0;) {
    const double not_done = dones[i] ? 0.0 : 1.0;
    const double v_next = (i + 1 < n) ? values[i + 1] : bootstrap_value;
    const double delta = rewards[i] + gamma * not_done * v_next - values[i];
    running = delta + gamma * lam * not_done * running;
    (*advantages)[i] = running;
    (*returns)[i] = running + values[i];
  }
}

PPOTrainer::PPOTrainer(PolicyNet<float> net, const PPOConfig& cfg)
    : net_(std::move(net)), cfg_(cfg), rng_(mix64(cfg.seed ^ 0x70706full)) {
  cfg_.validate();
  if (!net_.has_value_head()) net_.add_value_head(cfg_.seed);
  const int dof = net_.config().dof;
  log_std_ = grad::Tensor<float>::param(
      {dof}, std::vector<float>(dof, float(std::log(cfg_.init_action_std))),
      "log_std");

  for (const auto& p : net_.params()) {
    if (p.name().rfind("value.", 0) == 0)
      value_params_.push_back(p);
    else
      actor_params_.push_back(p);
  }
  if (cfg_.learn_std) actor_params_.push_back(log_std_);

  grad::AdamWConfig a;
  a.lr = cfg_.lr;
  a.weight_decay = 0.0;  // plain Adam behavior for RL
  opt_actor_.emplace(actor_params_, a);
  opt_value_.emplace(value_params_, a);
}

double PPOTrainer::mean_std() const {
  double s = 0;
  for (const float v : log_std_.value()) s += std::exp(double(v));
  return s / double(log_std_.size());
}

PPOTrainer::Decision PPOTrainer::decide(
    const std::vector<std::vector<const Observation*>>& windows) {
  const auto in = net_.make_batch(windows);
  const auto actions = net_.forward_actions(in);
  const auto values = net_.forward_values(in);
  const int B = int(windows.size()), L = net_.config().context,
            dof = net_.config().dof;
  Decision d;
  d.mean.resize(B, dof);
  d.value.resize(B);
  for (int w = 0; w < B; ++w) {
    for (int i = 0; i < dof; ++i)
      d.mean(w, i) = double(actions.value()[(size_t(w) * L + L - 1) * dof + i]);
    d.value[w] = double(values.value()[w]);
  }
  return d;
}

double PPOTrainer::log_prob(const Eigen::VectorXd& mean,
                            const Eigen::VectorXd& action) const {
  const int dof = net_.config().dof;
  double lp = -0.5 * dof * std::log(2 * M_PI);
  for (int i = 0; i < dof; ++i) {
    const double ls = double(log_std_.value()[i]);
    const double z = (action[i] - mean[i]) * std::exp(-ls);
    lp += -0.5 * z * z - ls;
  }
  return lp;
}

namespace {

struct MinibatchGraph {
  grad::Tensor<float> logp;   // [m]
  grad::Tensor<float> value;  // [m]
};

MinibatchGraph build_graph(const PolicyNet<float>& net,
                           const grad::Tensor<float>& log_std,
                           const std::vector<const PPOSample*>& mb) {
  using namespace grad;
  std::vector<std::vector<const Observation*>> windows;
  windows.reserve(mb.size());
  for (const auto* s : mb) {
    std::vector<const Observation*> w;
    for (const auto& o : s->window) w.push_back(&o);
    windows.push_back(std::move(w));
  }
  const auto in = net.make_batch(windows);
  const int dof = net.config().dof, L = net.config().context;
  const int m = int(mb.size());

  auto ac = net.forward_actor_critic(in);
  std::vector<int> last_rows(m);
  for (int w = 0; w < m; ++w) last_rows[w] = w * L + (L - 1);
  auto mu = gather_rows(ac.actions, last_rows);  // [m x dof]

  std::vector<float> act(size_t(m) * dof);
  for (int w = 0; w < m; ++w)
    for (int i = 0; i < dof; ++i) act[size_t(w) * dof + i] = float(mb[w]->action_norm[i]);
  auto a_const = Tensor<float>::from({m, dof}, act);

  auto diff = sub(a_const, mu);
  auto sq = mul(diff, diff);
  auto inv_var = exp(scale(log_std, -2.0));
  auto weighted = mul_rowwise(sq, inv_var);
  auto quad = scale(rowsum(weighted), -0.5);
  auto logp = add_scalar(quad, scale(sum(log_std), -1.0));
  logp = add_const(logp, -0.5 * dof * std::log(2 * M_PI));

  MinibatchGraph g;
  g.logp = logp;
  g.value = rowsum(ac.values);  // [m x 1] -> [m]
  return g;
}

}  // namespace

PPOUpdateStats PPOTrainer::update(const std::vector<PPOSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("ppo update: no samples");
  const size_t n = samples.size();

  // Advantage normalization over the whole batch.
  double mean = 0, var = 0;
  for (const auto& s : samples) mean += s.advantage;
  mean /= double(n);
  for (const auto& s : samples) var += (s.advantage - mean) * (s.advantage - mean);
  var /= double(n);
  const double inv_std = 1.0 / (std::sqrt(var) + 1e-8);
  std::vector<double> adv(n);
  for (size_t i = 0; i < n; ++i) adv[i] = (samples[i].advantage - mean) * inv_std;

  // Epoch-one partition, also used to evaluate the old log-probs before any
  // parameter changes (same forward path, so the first minibatch's ratios
  // are exactly one).
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  for (size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng_.uniform_int(i)]);

  auto minibatch_of = [&](const std::vector<size_t>& ord, int k) {
    const size_t lo = k * n / cfg_.minibatches, hi = (k + 1) * n / cfg_.minibatches;
    std::vector<const PPOSample*> mb;
    std::vector<size_t> idx;
    for (size_t i = lo; i < hi; ++i) {
      mb.push_back(&samples[ord[i]]);
      idx.push_back(ord[i]);
    }
    return std::pair(mb, idx);
  };

  std::vector<double> logp_old(n, 0.0);
  for (int k = 0; k < cfg_.minibatches; ++k) {
    const auto [mb, idx] = minibatch_of(order, k);
    if (mb.empty()) continue;
    const auto g = build_graph(net_, log_std_, mb);
    for (size_t i = 0; i < idx.size(); ++i) logp_old[idx[i]] = double(g.logp.value()[i]);
  }

  PPOUpdateStats stats;
  int stat_count = 0;
  bool first_minibatch = true;

  std::vector<size_t> epoch_order = order;
  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    if (epoch > 0)
      for (size_t i = n; i > 1; --i)
        std::swap(epoch_order[i - 1], epoch_order[rng_.uniform_int(i)]);

    for (int k = 0; k < cfg_.minibatches; ++k) {
      const auto [mb, idx] = minibatch_of(epoch_order, k);
      if (mb.empty()) continue;
      using namespace grad;
      const auto g = build_graph(net_, log_std_, mb);
      const int m = int(mb.size());

      std::vector<float> lp_old(m), adv_v(m), ret_v(m);
      for (int i = 0; i < m; ++i) {
        lp_old[i] = float(logp_old[idx[i]]);
        adv_v[i] = float(adv[idx[i]]);
        ret_v[i] = float(mb[i]->ret);
      }
      auto ratio = exp(sub(g.logp, Tensor<float>::from({m}, lp_old)));
      if (first_minibatch) {
        for (int i = 0; i < m; ++i)
          stats.first_ratio_error = std::max(
              stats.first_ratio_error, std::abs(double(ratio.value()[i]) - 1.0));
        first_minibatch = false;
      }
      auto adv_t = Tensor<float>::from({m}, adv_v);
      auto surr1 = mul(ratio, adv_t);
      auto surr2 = mul(clamp(ratio, 1.0 - cfg_.clip, 1.0 + cfg_.clip), adv_t);
      auto pi_loss = neg(grad::mean(minimum(surr1, surr2)));
      auto v_loss = mse_loss(g.value, ret_v);
      auto total = add(pi_loss, scale(v_loss, cfg_.vf_coef));
      if (cfg_.entropy_coef > 0)
        total = add(total, scale(sum(log_std_), -cfg_.entropy_coef));

      net_.zero_grad();
      log_std_.zero_grad();
      backward(total);

      if (!std::isfinite(double(total.item())))
        throw std::runtime_error("ppo update: non-finite loss");

      if (gradient_steps_ < cfg_.value_warmup_steps) {
        opt_value_->step(value_params_);  // actor frozen during warmup
      } else {
        opt_actor_->step(actor_params_);
        opt_value_->step(value_params_);
      }
      ++gradient_steps_;

      stats.pi_loss += double(pi_loss.item());
      stats.value_loss += double(v_loss.item());
      double rsum = 0;
      for (const float r : ratio.value()) rsum += double(r);
      stats.mean_ratio += rsum / m;
      ++stat_count;
    }
  }
  if (stat_count > 0) {
    stats.pi_loss /= stat_count;
    stats.value_loss /= stat_count;
    stats.mean_ratio /= stat_count;
  }
  return stats;
}

namespace {

struct EnvRunner {
  std::optional<ToyTask> task;
  std::vector<Observation> history;
  Rng reset_rng{0};
  double episode_return = 0.0;
  bool episode_success = false;
  bool episode_grasped = false;
  bool episode_collided = false;
  int episode_len = 0;
  JointVector ma_action;  // moving-average wrapper state

  void reset(const KinematicChain& chain) {
    history.clear();
    history.push_back(task->reset(reset_rng));
    episode_return = 0.0;
    episode_success = false;
    episode_grasped = false;
    episode_collided = false;
    episode_len = 0;
    ma_action = task->state().q;
    (void)chain;
  }

  std::vector<const Observation*> window(int context) const {
    std::vector<const Observation*> w;
    const int start = std::max(0, int(history.size()) - context);
    for (size_t i = start; i < history.size(); ++i) w.push_back(&history[i]);
    return w;
  }

  void push_obs(Observation obs, int context) {
    history.push_back(std::move(obs));
    if (int(history.size()) > context)
      history.erase(history.begin(), history.end() - context);
  }
};

}  // namespace

TrainRLResult train_rl(std::optional<PolicyNet<float>> init,
                       const TransformerConfig& fresh_cfg, const Scene& scene,
                       const ToyTaskConfig& tcfg, const PPOConfig& cfg) {
  cfg.validate();
  const auto& chain = *scene.chain;

  PolicyNet<float> net;
  if (init) {
    net = init->clone();
    check_checkpoint_compatible(net, chain.dof(), tcfg.n_points);
  } else {
    TransformerConfig c = fresh_cfg;
    c.dof = chain.dof();
    c.n_points = tcfg.n_points;
    net = PolicyNet<float>::init(c, stats_from_limits(chain), false, cfg.seed);
  }

  TrainRLResult result;
  result.mask_object = net.mask_object();

  PPOTrainer trainer(std::move(net), cfg);
  const int L = trainer.net().config().context;
  const int dof = chain.dof();

  std::vector<EnvRunner> envs(cfg.n_envs);
  for (int e = 0; e < cfg.n_envs; ++e) {
    envs[e].task.emplace(scene, tcfg);
    envs[e].reset_rng = Rng::split(cfg.seed, 7000 + e);
    envs[e].reset(chain);
  }
  Rng action_rng(mix64(cfg.seed ^ 0x616374ull));

  struct EpisodeStat {
    double ret;
    bool success, grasped, collided;
    int length;
  };
  std::deque<EpisodeStat> episode_log;
  int64_t episodes_done = 0;
  int64_t env_steps = 0;

  while (env_steps < cfg.max_env_steps) {
    // ---- collect ----
    const int T = cfg.rollout_steps, E = cfg.n_envs;
    std::vector<std::vector<PPOSample>> stream(E);
    std::vector<std::vector<double>> rewards(E), values(E);
    std::vector<std::vector<uint8_t>> dones(E);
    struct Patch {
      int env, t;
      std::vector<Observation> window;
    };
    std::vector<Patch> truncation_patches;

    for (int t = 0; t < T; ++t) {
      std::vector<std::vector<const Observation*>> windows;
      for (auto& e : envs) windows.push_back(e.window(L));
      auto d = trainer.decide(windows);

      for (int e = 0; e < E; ++e) {
        Eigen::VectorXd a_norm(dof);
        for (int i = 0; i < dof; ++i)
          a_norm[i] = d.mean(e, i) +
                      std::exp(double(trainer.log_std().value()[i])) *
                          action_rng.normal();

        PPOSample s;
        for (const auto* o : windows[e]) s.window.push_back(*o);
        s.action_norm = a_norm;
        stream[e].push_back(std::move(s));
        values[e].push_back(d.value[e]);

        JointVector a = trainer.net().denormalize_action(a_norm);
        if (cfg.moving_average_actions) {
          envs[e].ma_action = cfg.ma_beta * envs[e].ma_action + (1 - cfg.ma_beta) * a;
          a = envs[e].ma_action;
        }
        const auto res = envs[e].task->step(chain.clamp_to_limits(a));
        if (std::getenv("HOP_RL_DEBUG") && e == 0 && res.collided &&
            envs[e].episode_len < 3) {
          std::cerr << "dbg collide ep_len=" << envs[e].episode_len
                    << " q=" << envs[e].task->state().q.transpose()
                    << " a=" << chain.clamp_to_limits(a).transpose()
                    << " mean_row0=" << d.mean.row(e) << "\n";
        }
        envs[e].episode_return += res.reward;
        envs[e].episode_success |= res.success;
        envs[e].episode_grasped |= envs[e].task->grasped();
        envs[e].episode_collided |= res.collided;
        envs[e].episode_len += 1;
        rewards[e].push_back(res.reward);
        dones[e].push_back(res.done || res.truncated ? 1 : 0);
        ++env_steps;

        Observation next = envs[e].task->observe();
        envs[e].push_obs(std::move(next), L);

        if (res.truncated) {
          // Bootstrap through the horizon cut: r += gamma * V(s_next).
          Patch p;
          p.env = e;
          p.t = t;
          p.window = envs[e].history;
          truncation_patches.push_back(std::move(p));
        }
        if (res.done || res.truncated) {
          episode_log.push_back({envs[e].episode_return, envs[e].episode_success,
                                 envs[e].episode_grasped, envs[e].episode_collided,
                                 envs[e].episode_len});
          if (int(episode_log.size()) > cfg.success_window) episode_log.pop_front();
          ++episodes_done;
          envs[e].reset(chain);
        }
      }
    }

    if (!truncation_patches.empty()) {
      std::vector<std::vector<const Observation*>> windows;
      for (const auto& p : truncation_patches) {
        std::vector<const Observation*> w;
        const int start = std::max(0, int(p.window.size()) - L);
        for (size_t i = start; i < p.window.size(); ++i) w.push_back(&p.window[i]);
        windows.push_back(std::move(w));
      }
      const auto d = trainer.decide(windows);
      for (size_t i = 0; i < truncation_patches.size(); ++i)
        rewards[truncation_patches[i].env][truncation_patches[i].t] +=
            cfg.gae_gamma * d.value[i];
    }

    // Bootstrap values for streams cut mid-episode.
    std::vector<std::vector<const Observation*>> tail_windows;
    for (auto& e : envs) tail_windows.push_back(e.window(L));
    const auto tail = trainer.decide(tail_windows);

    std::vector<PPOSample> samples;
    for (int e = 0; e < E; ++e) {
      std::vector<double> a, r;
      gae(rewards[e], values[e], dones[e], cfg.gae_gamma, cfg.gae_lambda, tail.value[e],
          &a, &r);
      for (size_t t = 0; t < stream[e].size(); ++t) {
        stream[e][t].advantage = a[t];
        stream[e][t].ret = r[t];
        samples.push_back(std::move(stream[e][t]));
      }
    }

    trainer.update(samples);

    // ---- curve ----
    double ret_sum = 0, succ_sum = 0, grasp_sum = 0, coll_sum = 0, len_sum = 0;
    for (const auto& ep : episode_log) {
      ret_sum += ep.ret;
      succ_sum += ep.success ? 1 : 0;
      grasp_sum += ep.grasped ? 1 : 0;
      coll_sum += ep.collided ? 1 : 0;
      len_sum += ep.length;
    }
    RLCurvePoint pt;
    pt.env_steps = env_steps;
    const double n_eps = std::max<size_t>(1, episode_log.size());
    pt.mean_return = episode_log.empty() ? 0 : ret_sum / n_eps;
    pt.success_rate = episode_log.empty() ? 0 : succ_sum / n_eps;
    pt.grasp_rate = grasp_sum / n_eps;
    pt.collision_rate = coll_sum / n_eps;
    pt.mean_episode_len = len_sum / n_eps;
    pt.policy_std = trainer.mean_std();
    result.curve.push_back(pt);
    if (!std::isfinite(pt.mean_return))
      throw std::runtime_error("train_rl: mean return diverged");

    if (result.steps_to_target < 0 && episodes_done >= 10 &&
        pt.success_rate >= cfg.target_success)
      result.steps_to_target = env_steps;
  }

  result.net = trainer.net().clone();
  return result;
}

EvalResult evaluate(const PolicyNet<float>& net, const Scene& scene,
                    const ToyTaskConfig& tcfg, int n_episodes, uint64_t seed,
                    bool moving_average_actions, double ma_beta) {
  if (n_episodes <= 0) throw std::invalid_argument("evaluate: n_episodes must be > 0");
  const auto& chain = *scene.chain;
  ToyTask task(scene, tcfg);
  const int L = net.config().context;

  double returns = 0;
  int successes = 0;
  for (int ep = 0; ep < n_episodes; ++ep) {
    Rng rng = Rng::split(seed, ep);
    std::vector<Observation> history{task.reset(rng)};
    JointVector ma = task.state().q;
    bool success = false;
    for (;;) {
      JointVector a = net.act(history);
      if (moving_average_actions) {
        ma = ma_beta * ma + (1 - ma_beta) * a;
        a = ma;
      }
      const auto res = task.step(chain.clamp_to_limits(a));
      returns += res.reward;
      success |= res.success;
      history.push_back(task.observe());
      if (int(history.size()) > L) history.erase(history.begin());
      if (res.done || res.truncated) break;
    }
    successes += success ? 1 : 0;
  }
  return {double(successes) / n_episodes, returns / n_episodes};
}

EvalResult evaluate_random(const Scene& scene, const ToyTaskConfig& tcfg,
                           int n_episodes, uint64_t seed) {
  if (n_episodes <= 0) throw std::invalid_argument("evaluate: n_episodes must be > 0");
  const auto& chain = *scene.chain;
  ToyTask task(scene, tcfg);
  const auto lo = chain.lower_limits(), hi = chain.upper_limits();

  double returns = 0;
  int successes = 0;
  for (int ep = 0; ep < n_episodes; ++ep) {
    Rng rng = Rng::split(seed, ep);
    (void)task.reset(rng);
    bool success = false;
    for (;;) {
      JointVector a(chain.dof());
      for (int i = 0; i < a.size(); ++i) a[i] = rng.uniform(lo[i], hi[i]);
      const auto res = task.step(a);
      returns += res.reward;
      success |= res.success;
      if (res.done || res.truncated) break;
    }
    successes += success ? 1 : 0;
  }
  return {double(successes) / n_episodes, returns / n_episodes};
}

std::string rl_curve_to_csv(const std::vector<RLCurvePoint>& curve) {
  std::ostringstream ss;
  ss << "env_steps,mean_return,success_rate,policy_std\n";
  ss.precision(10);
  for (const auto& p : curve)
    ss << p.env_steps << "," << p.mean_return << "," << p.success_rate << ","
       << p.policy_std << "\n";
  return ss.str();
}

}  // namespace hop
