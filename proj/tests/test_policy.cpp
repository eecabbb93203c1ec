#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "hop/checkpoint.hpp"
#include "hop/pretrain.hpp"

using namespace hop;

namespace {

TransformerConfig small_config() {
  TransformerConfig cfg;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.hidden = 16;
  cfg.context = 4;
  cfg.dof = 3;
  cfg.n_points = 8;
  return cfg;
}

NormStats unit_stats(int dof) {
  NormStats s;
  s.proprio_mean = Eigen::VectorXd::Zero(dof);
  s.proprio_std = Eigen::VectorXd::Ones(dof);
  s.action_mean = Eigen::VectorXd::Zero(dof);
  s.action_std = Eigen::VectorXd::Ones(dof);
  return s;
}

Observation random_obs(int dof, int n_points, Rng& rng) {
  Observation o;
  o.proprio.resize(dof);
  for (int i = 0; i < dof; ++i) o.proprio[i] = rng.uniform(-1, 1);
  o.object_points.resize(n_points, 3);
  for (int p = 0; p < n_points; ++p)
    for (int c = 0; c < 3; ++c) o.object_points(p, c) = rng.uniform(-1, 1);
  return o;
}

SensorimotorTrajectory random_traj(int len, int dof, int n_points, Rng& rng) {
  SensorimotorTrajectory t;
  for (int k = 0; k < len; ++k) {
    TrajectoryStep s;
    s.obs = random_obs(dof, n_points, rng);
    s.action.resize(dof);
    for (int i = 0; i < dof; ++i) s.action[i] = rng.uniform(-1, 1);
    t.steps.push_back(std::move(s));
  }
  return t;
}

std::vector<double> forward_window(const PolicyNet<float>& net,
                                   const std::vector<Observation>& window) {
  std::vector<const Observation*> ptrs;
  for (const auto& o : window) ptrs.push_back(&o);
  const auto out = net.forward_actions(net.make_batch({ptrs}));
  return std::vector<double>(out.value().begin(), out.value().end());
}

}  // namespace

TEST_CASE("short windows produce finite, small outputs on a fresh net") {
  auto cfg = small_config();
  auto net = PolicyNet<float>::init(cfg, unit_stats(cfg.dof), false, 1);
  Rng rng(2);
  std::vector<Observation> window = {random_obs(cfg.dof, cfg.n_points, rng)};
  const auto out = forward_window(net, window);  // L=1 window, padded to 4
  CHECK(out.size() == size_t(cfg.context) * cfg.dof);
  for (double v : out) {
    CHECK(std::isfinite(v));
    CHECK(std::abs(v) < 1.0);  // init scale keeps outputs small
  }
}

TEST_CASE("mask_object: cloud contents cannot influence predictions") {
  auto cfg = small_config();
  auto net = PolicyNet<float>::init(cfg, unit_stats(cfg.dof), true, 3);
  Rng rng(4);
  std::vector<Observation> w1, w2;
  for (int k = 0; k < cfg.context; ++k) {
    Observation o = random_obs(cfg.dof, cfg.n_points, rng);
    w1.push_back(o);
    // Same proprioception, completely different cloud.
    Observation o2 = o;
    for (int p = 0; p < cfg.n_points; ++p)
      for (int c = 0; c < 3; ++c) o2.object_points(p, c) = rng.uniform(5, 6);
    w2.push_back(o2);
  }
  CHECK(forward_window(net, w1) == forward_window(net, w2));
}

TEST_CASE("without masking, clouds do influence predictions") {
  auto cfg = small_config();
  auto net = PolicyNet<float>::init(cfg, unit_stats(cfg.dof), false, 3);
  Rng rng(4);
  std::vector<Observation> w1, w2;
  for (int k = 0; k < cfg.context; ++k) {
    Observation o = random_obs(cfg.dof, cfg.n_points, rng);
    w1.push_back(o);
    Observation o2 = o;
    o2.object_points.array() += 0.5;  // translate the cloud
    w2.push_back(o2);
  }
  CHECK(forward_window(net, w1) != forward_window(net, w2));
}

TEST_CASE("point permutation leaves the cloud token unchanged") {
  auto cfg = small_config();
  auto net = PolicyNet<float>::init(cfg, unit_stats(cfg.dof), false, 5);
  Rng rng(6);
  std::vector<Observation> w1;
  for (int k = 0; k < cfg.context; ++k) w1.push_back(random_obs(cfg.dof, cfg.n_points, rng));
  auto w2 = w1;
  // Reverse the point order in every cloud.
  for (auto& o : w2) o.object_points = o.object_points.colwise().reverse().eval();
  CHECK(forward_window(net, w1) == forward_window(net, w2));
}

TEST_CASE("causality: perturbing a later observation keeps earlier outputs bit-identical") {
  auto cfg = small_config();
  auto net = PolicyNet<float>::init(cfg, unit_stats(cfg.dof), false, 7);
  Rng rng(8);
  std::vector<Observation> w1;
  for (int k = 0; k < cfg.context; ++k) w1.push_back(random_obs(cfg.dof, cfg.n_points, rng));
  auto w2 = w1;
  w2[2].proprio[1] += 0.37;
  w2[2].object_points(0, 0) += 0.5;

  const auto o1 = forward_window(net, w1);
  const auto o2 = forward_window(net, w2);
  for (int t = 0; t < 2; ++t)
    for (int i = 0; i < cfg.dof; ++i)
      CHECK(o1[size_t(t) * cfg.dof + i] == o2[size_t(t) * cfg.dof + i]);
  bool later_changed = false;
  for (int t = 2; t < cfg.context; ++t)
    for (int i = 0; i < cfg.dof; ++i)
      later_changed |= o1[size_t(t) * cfg.dof + i] != o2[size_t(t) * cfg.dof + i];
  CHECK(later_changed);
}

TEST_CASE("identical windows give identical predictions regardless of origin") {
  auto cfg = small_config();
  auto net = PolicyNet<float>::init(cfg, unit_stats(cfg.dof), false, 9);
  Rng rng(10);
  std::vector<Observation> w;
  for (int k = 0; k < cfg.context; ++k) w.push_back(random_obs(cfg.dof, cfg.n_points, rng));
  CHECK(forward_window(net, w) == forward_window(net, w));
  // Same windows inside different batches.
  std::vector<const Observation*> ptrs;
  for (const auto& o : w) ptrs.push_back(&o);
  const auto out2 = net.forward_actions(net.make_batch({ptrs, ptrs}));
  const int n = cfg.context * cfg.dof;
  for (int i = 0; i < n; ++i)
    CHECK(out2.value()[i] == out2.value()[size_t(n) + i]);
}

TEST_CASE("full-policy gradient matches finite differences in f64") {
  TransformerConfig cfg = small_config();
  cfg.dof = 2;
  cfg.n_points = 4;
  auto net = PolicyNet<double>::init(cfg, unit_stats(cfg.dof), false, 11);
  Rng rng(12);

  // One fixed batch of two windows with targets.
  std::vector<Observation> obs;
  for (int k = 0; k < 2 * cfg.context; ++k)
    obs.push_back(random_obs(cfg.dof, cfg.n_points, rng));
  std::vector<std::vector<const Observation*>> windows(2);
  for (int k = 0; k < cfg.context; ++k) {
    windows[0].push_back(&obs[k]);
    windows[1].push_back(&obs[cfg.context + k]);
  }
  const auto in = net.make_batch(windows);
  std::vector<double> target(size_t(2) * cfg.context * cfg.dof);
  for (auto& t : target) t = rng.uniform(1.0, 2.0);

  auto build = [&] {
    auto pred = net.forward_actions(in);
    return grad::weighted_l1(pred, target, in.row_weight);
  };
  auto loss = build();
  net.zero_grad();
  grad::backward(loss);

  const double h = 1e-6;
  double worst = 0;
  for (auto& p : net.params()) {
    const auto analytic = p.grad();
    // Probe a deterministic subset of each parameter tensor.
    const size_t stride = std::max<size_t>(1, p.size() / 7);
    for (size_t i = 0; i < p.size(); i += stride) {
      const double orig = p.value()[i];
      p.value()[i] = orig + h;
      const double fp = build().item();
      p.value()[i] = orig - h;
      const double fm = build().item();
      p.value()[i] = orig;
      const double fd = (fp - fm) / (2 * h);
      worst = std::max(worst, std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd)));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("checkpoint round-trip is bit-exact and validates integrity") {
  auto cfg = small_config();
  auto net = PolicyNet<float>::init(cfg, unit_stats(cfg.dof), false, 13);
  Rng rng(14);
  std::vector<Observation> w;
  for (int k = 0; k < cfg.context; ++k) w.push_back(random_obs(cfg.dof, cfg.n_points, rng));
  const auto before = forward_window(net, w);

  const auto path = std::filesystem::temp_directory_path() / "hop_test_ckpt.hopc";
  CheckpointState state;
  state.config_echo = "{\"seed\":1}";
  state.config_hash = "abc";
  save_checkpoint(net, path.string(), state);

  CheckpointState loaded_state;
  auto loaded = load_checkpoint<float>(path.string(), &loaded_state);
  CHECK(loaded_state.config_echo == state.config_echo);
  CHECK(loaded_state.config_hash == "abc");
  CHECK(loaded.mask_object() == false);
  CHECK(forward_window(loaded, w) == before);

  // Truncation is detected.
  const auto trunc_path = std::filesystem::temp_directory_path() / "hop_trunc.hopc";
  {
    std::ifstream in(path, std::ios::binary);
    std::string all((std::istreambuf_iterator<char>(in)), {});
    std::ofstream out(trunc_path, std::ios::binary);
    out.write(all.data(), std::streamsize(all.size() / 2));
  }
  CHECK_THROWS_WITH_AS(load_checkpoint<float>(trunc_path.string()),
                       doctest::Contains("truncated"), std::runtime_error);

  // A flipped payload byte is caught by the tensor checksum.
  const auto corrupt_path = std::filesystem::temp_directory_path() / "hop_bad.hopc";
  {
    std::ifstream in(path, std::ios::binary);
    std::string all((std::istreambuf_iterator<char>(in)), {});
    all[all.size() / 2] ^= 0x10;
    std::ofstream out(corrupt_path, std::ios::binary);
    out.write(all.data(), std::streamsize(all.size()));
  }
  CHECK_THROWS_WITH_AS(load_checkpoint<float>(corrupt_path.string()),
                       doctest::Contains("checksum"), std::runtime_error);

  // Dimension guards name the offending field.
  CHECK_THROWS_WITH_AS(check_checkpoint_compatible(net, cfg.dof + 1, cfg.n_points),
                       doctest::Contains("dof"), std::runtime_error);
  std::filesystem::remove(path);
  std::filesystem::remove(trunc_path);
  std::filesystem::remove(corrupt_path);
}

TEST_CASE("mask flag round-trips and gates finetuning") {
  auto cfg = small_config();
  auto net = PolicyNet<float>::init(cfg, unit_stats(cfg.dof), true, 15);
  const auto path = std::filesystem::temp_directory_path() / "hop_mask.hopc";
  save_checkpoint(net, path.string());
  auto loaded = load_checkpoint<float>(path.string());
  CHECK(loaded.mask_object() == true);

  // Continuing training with a mismatched mask flag is refused.
  Rng rng(16);
  std::vector<SensorimotorTrajectory> data = {random_traj(8, cfg.dof, cfg.n_points, rng)};
  PretrainConfig pcfg;
  pcfg.steps = 1;
  pcfg.batch_size = 2;
  pcfg.mask_object = false;
  CHECK_THROWS_WITH_AS(pretrain(data, data, cfg, pcfg, loaded),
                       doctest::Contains("mask_object"), std::invalid_argument);
  std::filesystem::remove(path);
}

TEST_CASE("pretraining is deterministic and can overfit one trajectory") {
  auto cfg = small_config();
  Rng rng(17);
  std::vector<SensorimotorTrajectory> data = {random_traj(10, cfg.dof, cfg.n_points, rng)};

  PretrainConfig pcfg;
  pcfg.steps = 800;
  pcfg.batch_size = 8;
  pcfg.lr = 3e-3;  // aggressive, tiny model
  pcfg.weight_decay = 0.0;
  pcfg.eval_interval = 100;
  pcfg.seed = 21;

  const auto a = pretrain(data, data, cfg, pcfg);
  const auto b = pretrain(data, data, cfg, pcfg);
  REQUIRE(a.curve.size() == b.curve.size());
  for (size_t i = 0; i < a.curve.size(); ++i) {
    CHECK(a.curve[i].train_l1 == b.curve[i].train_l1);
    CHECK(a.curve[i].val_l1 == b.curve[i].val_l1);
  }
  CHECK(a.final_train_l1 < 0.05);

  // Closed-loop readout: the window ending at each t predicts its action.
  const auto& traj = data[0];
  double l1 = 0;
  for (int t = 0; t < traj.length(); ++t) {
    std::vector<Observation> window;
    for (int k = std::max(0, t - cfg.context + 1); k <= t; ++k)
      window.push_back(traj.steps[k].obs);
    const auto pred = a.net.act(window);
    l1 += (pred - traj.steps[t].action).template lpNorm<1>() / cfg.dof;
  }
  l1 /= traj.length();
  CHECK(l1 < 0.1);
}
