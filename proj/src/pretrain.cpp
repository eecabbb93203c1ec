#include "hop/pretrain.hpp"

#include <sstream>

namespace hop {

namespace {

struct WindowRef {
  const SensorimotorTrajectory* traj;
  int t_end;
};

// Window of observations ending at t_end (inclusive), plus matching targets.
void append_window(const PolicyNet<float>& net, const WindowRef& w,
                   std::vector<std::vector<const Observation*>>& windows,
                   std::vector<const JointVector*>& targets) {
  const int L = net.config().context;
  const int start = std::max(0, w.t_end - L + 1);
  std::vector<const Observation*> obs;
  for (int k = start; k <= w.t_end; ++k) obs.push_back(&w.traj->steps[k].obs);
  windows.push_back(std::move(obs));
  // Targets aligned with the padded layout: left-pad with nulls.
  const int pad = L - (w.t_end - start + 1);
  for (int k = 0; k < pad; ++k) targets.push_back(nullptr);
  for (int k = start; k <= w.t_end; ++k) targets.push_back(&w.traj->steps[k].action);
}

double run_batch(const PolicyNet<float>& net,
                 const std::vector<std::vector<const Observation*>>& windows,
                 const std::vector<const JointVector*>& targets,
                 grad::Tensor<float>* loss_out) {
  const auto in = net.make_batch(windows);
  std::vector<uint8_t> pad = in.pad;
  std::vector<const JointVector*> tgt = targets;
  // normalize_actions skips pad rows (null targets).
  std::vector<float> target_values(tgt.size() * net.config().dof, 0.f);
  for (size_t r = 0; r < tgt.size(); ++r) {
    if (!tgt[r]) continue;
    for (int i = 0; i < net.config().dof; ++i)
      target_values[r * net.config().dof + i] =
          float(((*tgt[r])[i] - net.stats().action_mean[i]) /
                net.stats().action_std[i]);
  }
  auto pred = net.forward_actions(in);
  auto loss = grad::weighted_l1(pred, target_values, in.row_weight);
  if (loss_out) *loss_out = loss;
  return double(loss.item());
}

}  // namespace

double eval_l1(const PolicyNet<float>& net,
               const std::vector<SensorimotorTrajectory>& set, int max_windows,
               uint64_t seed) {
  if (set.empty()) return 0.0;
  Rng rng(mix64(seed ^ 0x6576616cull));
  std::vector<WindowRef> refs;
  size_t total = 0;
  for (const auto& t : set) total += t.steps.size();
  if (total <= size_t(max_windows)) {
    for (const auto& t : set)
      for (int k = 0; k < t.length(); ++k) refs.push_back({&t, k});
  } else {
    for (int i = 0; i < max_windows; ++i) {
      const auto& t = set[rng.uniform_int(set.size())];
      refs.push_back({&t, int(rng.uniform_int(t.steps.size()))});
    }
  }

  double loss_sum = 0;
  size_t weight_sum = 0;
  const int chunk = 64;
  for (size_t start = 0; start < refs.size(); start += chunk) {
    std::vector<std::vector<const Observation*>> windows;
    std::vector<const JointVector*> targets;
    const size_t end = std::min(refs.size(), start + chunk);
    for (size_t i = start; i < end; ++i)
      append_window(net, refs[i], windows, targets);
    const double l = run_batch(net, windows, targets, nullptr);
    loss_sum += l * double(end - start);
    weight_sum += end - start;
  }
  return loss_sum / double(weight_sum);
}

PretrainResult pretrain(
    const std::vector<SensorimotorTrajectory>& train,
    const std::vector<SensorimotorTrajectory>& val, const TransformerConfig& cfg,
    const PretrainConfig& pcfg, std::optional<PolicyNet<float>> init,
    const std::function<void(int64_t, const PolicyNet<float>&)>& on_checkpoint) {
  pcfg.validate();
  if (train.empty()) throw std::invalid_argument("pretrain: empty training set");
  for (const auto& t : train)
    if (t.dof() != cfg.dof || t.n_points() != cfg.n_points)
      throw std::invalid_argument("pretrain: dataset does not match config dims");

  PretrainResult result;
  if (init) {
    if (init->config() != cfg)
      throw std::invalid_argument("pretrain: init checkpoint config mismatch");
    if (init->mask_object() != pcfg.mask_object)
      throw std::invalid_argument(
          "pretrain: init checkpoint mask_object flag does not match config");
    result.net = init->clone();
  } else {
    std::vector<SensorimotorTrajectory> all = train;
    result.net =
        PolicyNet<float>::init(cfg, compute_stats(all), pcfg.mask_object, pcfg.seed);
  }
  auto& net = result.net;

  grad::AdamWConfig acfg;
  acfg.lr = pcfg.lr;
  acfg.weight_decay = pcfg.weight_decay;
  grad::AdamW<float> opt(net.params(), acfg);

  Rng rng(mix64(pcfg.seed ^ 0x70726574ull));
  result.best_val_l1 = std::numeric_limits<double>::infinity();
  std::vector<std::vector<float>> best_params;

  double train_l1 = 0.0;
  for (int64_t step = 1; step <= pcfg.steps; ++step) {
    std::vector<std::vector<const Observation*>> windows;
    std::vector<const JointVector*> targets;
    for (int b = 0; b < pcfg.batch_size; ++b) {
      const auto& t = train[rng.uniform_int(train.size())];
      append_window(net, {&t, int(rng.uniform_int(t.steps.size()))}, windows,
                    targets);
    }
    grad::Tensor<float> loss;
    train_l1 = run_batch(net, windows, targets, &loss);
    net.zero_grad();
    grad::backward(loss);
    opt.step(net.params());

    const bool last = step == pcfg.steps;
    if (pcfg.eval_interval > 0 && (step % pcfg.eval_interval == 0 || last)) {
      const double v = eval_l1(net, val, pcfg.max_eval_windows, pcfg.seed);
      result.curve.push_back({step, train_l1, v});
      if (v < result.best_val_l1) {
        result.best_val_l1 = v;
        result.best_step = step;
        if (pcfg.keep_best) {
          best_params.clear();
          for (const auto& p : net.params()) best_params.push_back(p.value());
        }
      }
    }
    if (pcfg.checkpoint_interval > 0 && on_checkpoint &&
        (step % pcfg.checkpoint_interval == 0 || last))
      on_checkpoint(step, net);
  }
  result.final_train_l1 = train_l1;

  if (pcfg.keep_best && !best_params.empty()) {
    for (size_t i = 0; i < net.params().size(); ++i)
      net.params()[i].value() = best_params[i];
  }
  return result;
}

std::string curve_to_csv(const std::vector<CurvePoint>& curve) {
  std::ostringstream ss;
  ss << "step,train_l1,val_l1\n";
  ss.precision(10);
  for (const auto& p : curve)
    ss << p.step << "," << p.train_l1 << "," << p.val_l1 << "\n";
  return ss.str();
}

}  // namespace hop
