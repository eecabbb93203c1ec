#include <cstdlib>

#include "doctest.h"
#include "hop/bc.hpp"
#include "hop/ppo.hpp"
#include "hop/retarget.hpp"

using namespace hop;

namespace {

std::string data_dir() {
  const char* d = std::getenv("HOP_TEST_DATA");
  return d ? d : "data";
}

Scene mini5_scene(const KinematicChain& chain) {
  Scene scene;
  scene.chain = &chain;
  scene.table.center = {0.42, 0, 0.125};
  scene.table.half_extents = {0.12, 0.25, 0.125};
  scene.gains = PDGains::uniform(chain.dof());
  return scene;
}

TransformerConfig tiny_model(int dof, int n_points) {
  TransformerConfig cfg;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.hidden = 16;
  cfg.context = 4;
  cfg.dof = dof;
  cfg.n_points = n_points;
  return cfg;
}

ToyTaskConfig mini5_task() {
  ToyTaskConfig cfg;
  cfg.n_points = 8;
  return cfg;
}

// Arm-only IK for scripted task solutions.
JointVector palm_ik_to(const KinematicChain& chain, const Vector3d& target,
                       const JointVector& seed) {
  RetargetProblem p;
  p.chain = &chain;
  p.bindings = {{0, chain.link_index("palm"), {0.10, 0, -0.06}, 1.0}};
  p.lambda = 1e-3;
  RetargetConfig cfg;
  cfg.lbfgs.max_iters = 300;
  Eigen::Matrix<double, Eigen::Dynamic, 3> x(1, 3);
  x.row(0) = target.transpose();
  return solve_step(p, x, seed, seed, cfg);
}

Observation dummy_obs(int dof, int n_points, Rng& rng) {
  Observation o;
  o.proprio.resize(dof);
  for (int i = 0; i < dof; ++i) o.proprio[i] = rng.uniform(-1, 1);
  o.object_points.resize(n_points, 3);
  for (int p = 0; p < n_points; ++p)
    for (int c = 0; c < 3; ++c) o.object_points(p, c) = rng.uniform(-1, 1);
  return o;
}

std::vector<PPOSample> fake_samples(int n, int window_len, int dof, int n_points,
                                    uint64_t seed) {
  Rng rng(seed);
  std::vector<PPOSample> out;
  for (int i = 0; i < n; ++i) {
    PPOSample s;
    for (int k = 0; k < window_len; ++k) s.window.push_back(dummy_obs(dof, n_points, rng));
    s.action_norm.resize(dof);
    for (int d = 0; d < dof; ++d) s.action_norm[d] = rng.uniform(-0.5, 0.5);
    s.advantage = rng.uniform(-1, 1);
    s.ret = rng.uniform(-1, 1);
    out.push_back(std::move(s));
  }
  return out;
}

NormStats unit_stats(int dof) {
  NormStats s;
  s.proprio_mean = Eigen::VectorXd::Zero(dof);
  s.proprio_std = Eigen::VectorXd::Ones(dof);
  s.action_mean = Eigen::VectorXd::Zero(dof);
  s.action_std = Eigen::VectorXd::Ones(dof);
  return s;
}

}  // namespace

TEST_CASE("gae: telescoping sum at gamma = lambda = 1") {
  const std::vector<double> r = {1, 2, 3, 4};
  const std::vector<double> v = {0.5, -0.25, 1.5, 0.0};
  const std::vector<uint8_t> dones = {0, 0, 0, 1};
  std::vector<double> adv, ret;
  gae(r, v, dones, 1.0, 1.0, 99.0 /* masked by the final done */, &adv, &ret);
  for (int t = 0; t < 4; ++t) {
    double future = 0;
    for (int k = t; k < 4; ++k) future += r[k];
    CHECK(adv[t] == doctest::Approx(future - v[t]).epsilon(1e-12));
    CHECK(ret[t] == doctest::Approx(future).epsilon(1e-12));
  }
}

TEST_CASE("gae: lambda = 0 is one-step TD") {
  const std::vector<double> r = {0.3, -0.2, 0.9};
  const std::vector<double> v = {1.0, 2.0, 3.0};
  const std::vector<uint8_t> dones = {0, 0, 0};
  const double gamma = 0.95, boot = 4.0;
  std::vector<double> adv, ret;
  gae(r, v, dones, gamma, 0.0, boot, &adv, &ret);
  CHECK(adv[0] == doctest::Approx(r[0] + gamma * v[1] - v[0]).epsilon(1e-12));
  CHECK(adv[1] == doctest::Approx(r[1] + gamma * v[2] - v[1]).epsilon(1e-12));
  CHECK(adv[2] == doctest::Approx(r[2] + gamma * boot - v[2]).epsilon(1e-12));
}

TEST_CASE("gae matches a brute-force recursion on random instances") {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 20;
    std::vector<double> r(n), v(n);
    std::vector<uint8_t> dones(n, 0);
    for (int i = 0; i < n; ++i) {
      r[i] = rng.uniform(-1, 1);
      v[i] = rng.uniform(-1, 1);
      dones[i] = rng.uniform() < 0.15 ? 1 : 0;
    }
    const double gamma = rng.uniform(0.8, 1.0), lam = rng.uniform(0.0, 1.0);
    const double boot = rng.uniform(-1, 1);
    std::vector<double> adv, ret;
    gae(r, v, dones, gamma, lam, boot, &adv, &ret);

    for (int t = 0; t < n; ++t) {
      double acc = 0, factor = 1;
      for (int l = t; l < n; ++l) {
        const double v_next = (l + 1 < n) ? v[l + 1] : boot;
        const double delta = r[l] + gamma * (dones[l] ? 0.0 : 1.0) * v_next - v[l];
        acc += factor * delta;
        if (dones[l]) break;
        factor *= gamma * lam;
      }
      CHECK(std::abs(adv[t] - acc) < 1e-10);
      CHECK(std::abs(ret[t] - (acc + v[t])) < 1e-10);
    }
  }
}

TEST_CASE("gae rejects mismatched lengths") {
  std::vector<double> adv, ret;
  CHECK_THROWS_AS(gae({1, 2}, {1}, {0, 0}, 0.9, 0.9, 0, &adv, &ret),
                  std::invalid_argument);
}

TEST_CASE("toy task: same seed gives identical resets") {
  const auto chain = load_chain(data_dir() + "/mini5.chain.json");
  const auto scene = mini5_scene(chain);
  ToyTask a(scene, mini5_task()), b(scene, mini5_task());
  Rng ra(5), rb(5);
  const auto oa = a.reset(ra);
  const auto ob = b.reset(rb);
  CHECK(oa.proprio == ob.proprio);
  CHECK(oa.object_points == ob.object_points);
  CHECK(a.state().object_pose.translation == b.state().object_pose.translation);
}

TEST_CASE("toy task: scripted reach-grasp-lift succeeds") {
  const auto chain = load_chain(data_dir() + "/mini5.chain.json");
  const auto scene = mini5_scene(chain);
  auto tcfg = mini5_task();
  tcfg.horizon = 200;
  tcfg.reset_noise = 0.05;  // scripted solution tolerates small noise only
  ToyTask task(scene, tcfg);
  Rng rng(11);
  (void)task.reset(rng);

  const Vector3d obj = task.state().object_pose.translation;
  const JointVector q0 = task.state().q;
  // Palm hovers so the fingertips bracket the object, then fingers close,
  // then the arm lifts.
  JointVector q_pre = palm_ik_to(chain, obj + Vector3d(0, 0, 0.115 - 0.06), q0);
  q_pre[3] = q_pre[4] = 0.0;
  JointVector q_grasp = q_pre;
  q_grasp[3] = q_grasp[4] = 0.75;
  JointVector q_lift = palm_ik_to(chain, obj + Vector3d(0, 0, 0.315 - 0.06), q_grasp);
  q_lift[3] = q_lift[4] = 0.75;

  bool success = false, collided = false;
  double reward_at_reach = 0;
  auto run_phase = [&](const JointVector& target, int steps) {
    for (int k = 0; k < steps && !success && !collided; ++k) {
      const auto res = task.step(target);
      success |= res.success;
      collided |= res.collided;
      reward_at_reach = res.reward;
      if (res.done || res.truncated) break;
    }
  };
  run_phase(q_pre, 40);
  const double reward_near = reward_at_reach;
  CHECK(task.reach_distance() < 0.08);
  run_phase(q_grasp, 30);
  CHECK(task.grasped());
  run_phase(q_lift, 60);
  CHECK(success);
  CHECK_FALSE(collided);
  CHECK(task.object_height_gain() >= tcfg.lift_threshold);
  (void)reward_near;
}

TEST_CASE("toy task: reach shaping is larger near the object") {
  const auto chain = load_chain(data_dir() + "/mini5.chain.json");
  const auto scene = mini5_scene(chain);
  auto tcfg = mini5_task();
  tcfg.horizon = 100;
  ToyTask task(scene, tcfg);
  Rng rng(13);
  (void)task.reset(rng);

  const auto r0 = task.step(task.state().q);  // stay put
  const double d0 = task.reach_distance();

  const Vector3d obj = task.state().object_pose.translation;
  JointVector q_pre = palm_ik_to(chain, obj + Vector3d(0, 0, 0.06), task.state().q);
  q_pre[3] = q_pre[4] = 0.0;
  ToyTask::StepResult r1{};
  for (int k = 0; k < 40; ++k) {
    r1 = task.step(q_pre);
    if (r1.done || r1.truncated) break;
  }
  CHECK(task.reach_distance() < d0);
  CHECK(r1.reward > r0.reward);
}

TEST_CASE("ppo trainer: initial std and severed critic gradients") {
  const int dof = 5, n_points = 8;
  auto net = PolicyNet<float>::init(tiny_model(dof, n_points), unit_stats(dof), false, 3);
  PPOConfig cfg;
  cfg.seed = 4;
  PPOTrainer trainer(net.clone(), cfg);
  CHECK(trainer.mean_std() == doctest::Approx(0.1).epsilon(1e-6));

  // Value-loss-only gradients: tokenizer parameters receive exactly zero.
  Rng rng(6);
  auto& tn = trainer.net();
  std::vector<Observation> obs;
  for (int k = 0; k < 4; ++k) obs.push_back(dummy_obs(dof, n_points, rng));
  std::vector<const Observation*> w;
  for (auto& o : obs) w.push_back(&o);
  const auto in = tn.make_batch({w});
  auto values = tn.forward_values(in);
  auto vloss = grad::mse_loss(grad::rowsum(values), {0.7f});
  tn.zero_grad();
  grad::backward(vloss);
  for (const auto& p : tn.tokenizer_params())
    for (float g : p.grad()) CHECK(g == 0.0f);
  // The trunk still learns from the critic.
  double trunk_grad = 0;
  for (float g : tn.param("layer0.attn.qkv.w").grad()) trunk_grad += std::abs(g);
  CHECK(trunk_grad > 0);

  // Actor-loss gradients do reach the tokenizer on generic inputs.
  auto actions = tn.forward_actions(in);
  auto aloss = grad::mean(grad::mul(actions, actions));
  tn.zero_grad();
  grad::backward(aloss);
  double tok_grad = 0;
  for (const auto& p : tn.tokenizer_params())
    for (float g : p.grad()) tok_grad += std::abs(g);
  CHECK(tok_grad > 0);
}

TEST_CASE("ppo warmup freezes the actor bit-exactly") {
  const int dof = 5, n_points = 8;
  auto net = PolicyNet<float>::init(tiny_model(dof, n_points), unit_stats(dof), false, 7);

  PPOConfig cfg;
  cfg.seed = 8;
  cfg.value_warmup_steps = 1000;  // everything below stays in warmup
  cfg.epochs = 2;
  cfg.minibatches = 2;
  PPOTrainer trainer(net.clone(), cfg);

  std::vector<std::vector<float>> actor_before;
  for (const auto& p : trainer.net().params())
    if (p.name().rfind("value.", 0) != 0) actor_before.push_back(p.value());
  const auto std_before = trainer.log_std().value();
  const auto value_before = trainer.net().param("value.w").value();

  const auto stats = trainer.update(fake_samples(16, 4, dof, n_points, 9));
  CHECK(stats.first_ratio_error == 0.0);  // ratios exactly one at old params

  size_t i = 0;
  for (const auto& p : trainer.net().params())
    if (p.name().rfind("value.", 0) != 0) CHECK(p.value() == actor_before[i++]);
  CHECK(trainer.log_std().value() == std_before);
  CHECK(trainer.net().param("value.w").value() != value_before);

  // Past warmup, the actor moves too.
  PPOConfig cfg2 = cfg;
  cfg2.value_warmup_steps = 0;
  PPOTrainer t2(net.clone(), cfg2);
  (void)t2.update(fake_samples(16, 4, dof, n_points, 9));
  bool actor_moved = false;
  for (const auto& p : t2.net().params())
    if (p.name() == "head.w") actor_moved = p.value() != net.param("head.w").value();
  CHECK(actor_moved);
}

TEST_CASE("train_rl: zero-reward task keeps success at zero, actor idle") {
  const auto chain = load_chain(data_dir() + "/mini5.chain.json");
  const auto scene = mini5_scene(chain);
  auto tcfg = mini5_task();
  tcfg.w_reach = 0;
  tcfg.grasp_bonus = 0;
  tcfg.w_lift = 0;
  tcfg.success_bonus = 0;
  tcfg.collision_penalty = 0;
  tcfg.lift_threshold = 1e9;  // success unreachable

  PPOConfig cfg;
  cfg.seed = 10;
  cfg.n_envs = 2;
  cfg.rollout_steps = 32;
  cfg.max_env_steps = 256;
  cfg.value_warmup_steps = 0;
  cfg.epochs = 2;
  cfg.minibatches = 2;
  cfg.entropy_coef = 0.0;

  auto result = train_rl(std::nullopt, tiny_model(chain.dof(), tcfg.n_points), scene,
                         tcfg, cfg);
  for (const auto& pt : result.curve) CHECK(pt.success_rate == 0.0);
}

TEST_CASE("train_rl runs are deterministic given the seed") {
  const auto chain = load_chain(data_dir() + "/mini5.chain.json");
  const auto scene = mini5_scene(chain);
  const auto tcfg = mini5_task();

  PPOConfig cfg;
  cfg.seed = 12;
  cfg.n_envs = 2;
  cfg.rollout_steps = 32;
  cfg.max_env_steps = 192;
  cfg.value_warmup_steps = 4;
  cfg.epochs = 2;
  cfg.minibatches = 2;

  const auto a = train_rl(std::nullopt, tiny_model(chain.dof(), tcfg.n_points), scene,
                          tcfg, cfg);
  const auto b = train_rl(std::nullopt, tiny_model(chain.dof(), tcfg.n_points), scene,
                          tcfg, cfg);
  REQUIRE(a.curve.size() == b.curve.size());
  for (size_t i = 0; i < a.curve.size(); ++i) {
    CHECK(a.curve[i].mean_return == b.curve[i].mean_return);
    CHECK(a.curve[i].success_rate == b.curve[i].success_rate);
    CHECK(a.curve[i].policy_std == b.curve[i].policy_std);
  }
  for (size_t i = 0; i < a.net.params().size(); ++i)
    CHECK(a.net.params()[i].value() == b.net.params()[i].value());
}

TEST_CASE("evaluate: seeded determinism, random baseline, zero episodes rejected") {
  const auto chain = load_chain(data_dir() + "/mini5.chain.json");
  const auto scene = mini5_scene(chain);
  const auto tcfg = mini5_task();
  auto net = PolicyNet<float>::init(tiny_model(chain.dof(), tcfg.n_points),
                                    stats_from_limits(chain), false, 20);

  const auto a = evaluate(net, scene, tcfg, 4, 99);
  const auto b = evaluate(net, scene, tcfg, 4, 99);
  CHECK(a.success_rate == b.success_rate);
  CHECK(a.mean_return == b.mean_return);
  CHECK_THROWS_AS(evaluate(net, scene, tcfg, 0, 1), std::invalid_argument);

  const auto r = evaluate_random(scene, tcfg, 20, 3);
  CHECK(r.success_rate < 0.05);
}

TEST_CASE("bc_finetune: zero demos rejected; same objective does not regress") {
  const auto cfg = tiny_model(3, 8);
  BcConfig bcfg;
  CHECK_THROWS_AS(bc_finetune(std::nullopt, {}, cfg, bcfg), std::invalid_argument);

  Rng rng(23);
  std::vector<SensorimotorTrajectory> corpus;
  for (int i = 0; i < 4; ++i) {
    SensorimotorTrajectory t;
    for (int k = 0; k < 10; ++k) {
      TrajectoryStep s;
      s.obs = dummy_obs(3, 8, rng);
      s.action.resize(3);
      for (int d = 0; d < 3; ++d) s.action[d] = rng.uniform(-1, 1);
      t.steps.push_back(std::move(s));
    }
    corpus.push_back(std::move(t));
  }

  PretrainConfig pcfg;
  pcfg.steps = 150;
  pcfg.batch_size = 8;
  pcfg.lr = 1e-3;
  pcfg.seed = 5;
  pcfg.eval_interval = 50;
  const auto pre = pretrain(corpus, corpus, cfg, pcfg);
  const double loss_before = eval_l1(pre.net, corpus, 64, 7);

  BcConfig bcfg2;
  bcfg2.base.steps = 100;
  bcfg2.base.batch_size = 8;
  bcfg2.base.lr = 1e-3;
  bcfg2.base.seed = 6;
  bcfg2.base.eval_interval = 25;
  bcfg2.base.checkpoint_interval = 0;
  bcfg2.val_fraction = 0.25;
  const auto fine = bc_finetune(pre.net.clone(), corpus, cfg, bcfg2);
  const double loss_after = eval_l1(fine.net, corpus, 64, 7);
  CHECK(loss_after <= loss_before + 0.02);
}
