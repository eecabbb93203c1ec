#pragma once

#include "hop/adamw.hpp"
#include "hop/dataset.hpp"
#include "hop/rng.hpp"
#include "hop/tensor.hpp"
#include "hop/trajectory.hpp"

namespace hop {

struct TransformerConfig {
  int layers = 4;
  int heads = 4;
  int hidden = 192;
  int context = 16;  // timesteps of history (two tokens each)
  int dof = 0;
  int n_points = 64;
  int pointnet_hidden = 64;

  void validate() const {
    if (hidden % heads != 0)
      throw std::invalid_argument("hidden must be divisible by heads");
    if (context < 1) throw std::invalid_argument("context must be >= 1");
    if (layers < 1 || dof < 1 || n_points < 1)
      throw std::invalid_argument("invalid transformer config");
  }

  bool operator==(const TransformerConfig&) const = default;
};

/// A batch of observation windows, flattened for the tape ops. Histories
/// shorter than the context are left-padded; padded slots carry zeros and a
/// pad flag (their tokens get replaced by the learned pad token).
template <typename S>
struct BatchInput {
  int batch = 0;
  int context = 0;
  std::vector<S> proprio;      // [B*L x dof], normalized
  std::vector<S> clouds;       // [B*L*N x 3]
  std::vector<uint8_t> pad;    // [B*L]
  std::vector<S> row_weight;   // [B*L]: 1 for real steps, 0 for padding
};

/// The policy network: linear proprioception tokenizer, PointNet cloud
/// tokenizer (two hidden layers, max-pool over points), learned additive
/// positional embeddings, a GPT-2 style causal transformer trunk and a
/// linear action head read at each timestep's cloud token.
template <typename S>
class PolicyNet {
 public:
  PolicyNet() = default;

  static PolicyNet init(const TransformerConfig& cfg, const NormStats& stats,
                        bool mask_object, uint64_t seed);

  const TransformerConfig& config() const { return cfg_; }
  bool mask_object() const { return mask_object_; }
  const NormStats& stats() const { return stats_; }
  void set_stats(const NormStats& s) { stats_ = s; }

  std::vector<grad::Tensor<S>>& params() { return params_; }
  const std::vector<grad::Tensor<S>>& params() const { return params_; }
  grad::Tensor<S> param(const std::string& name) const;

  /// Parameters belonging to the observation tokenizers (the critic's
  /// gradients must never reach these).
  std::vector<grad::Tensor<S>> tokenizer_params() const;

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  /// Normalized per-step action predictions, [B*L x dof]; position t sees
  /// observations up to and including t only.
  grad::Tensor<S> forward_actions(const BatchInput<S>& in) const {
    return action_head(trunk(tokens(in, false), in.batch));
  }

  /// State value per window, [B x 1], read at the last cloud token. Tokens
  /// are detached so value gradients cannot reach the tokenizers.
  grad::Tensor<S> forward_values(const BatchInput<S>& in) const;

  /// Both heads on a shared actor trunk plus a detached critic trunk.
  struct ActorCritic {
    grad::Tensor<S> actions;  // [B*L x dof]
    grad::Tensor<S> values;   // [B x 1]
  };
  ActorCritic forward_actor_critic(const BatchInput<S>& in) const;

  bool has_value_head() const { return has_value_head_; }
  void add_value_head(uint64_t seed);

  /// Convenience single-window inference: de-normalized action for the most
  /// recent timestep.
  JointVector act(const std::vector<Observation>& window) const;

  BatchInput<S> make_batch(
      const std::vector<std::vector<const Observation*>>& windows) const;

  std::vector<S> normalize_actions(const std::vector<const JointVector*>& actions,
                                   const std::vector<uint8_t>& pad) const;

  JointVector denormalize_action(const Eigen::VectorXd& a_norm) const;
  Eigen::VectorXd normalize_action(const JointVector& a) const;

  PolicyNet clone() const;

 private:
  grad::Tensor<S> tokens(const BatchInput<S>& in, bool detached) const;
  grad::Tensor<S> trunk(const grad::Tensor<S>& tok, int batch) const;
  grad::Tensor<S> action_head(const grad::Tensor<S>& trunk_out) const;

  grad::Tensor<S> add_param(std::vector<int> shape, std::string name, Rng& rng,
                            double init_std);

  TransformerConfig cfg_;
  NormStats stats_;
  bool mask_object_ = false;
  bool has_value_head_ = false;
  std::vector<grad::Tensor<S>> params_;

  template <typename T>
  friend struct PolicyCheckpointAccess;
};

// ---- implementation ----

template <typename S>
grad::Tensor<S> PolicyNet<S>::add_param(std::vector<int> shape, std::string name,
                                        Rng& rng, double init_std) {
  const size_t n = grad::Tensor<S>::count(shape);
  std::vector<S> v(n);
  if (init_std == 0.0) {
    std::fill(v.begin(), v.end(), S(0));
  } else if (init_std < 0.0) {  // layernorm gains
    std::fill(v.begin(), v.end(), S(1));
  } else {
    for (auto& x : v) x = S(rng.truncated_normal(init_std));
  }
  auto t = grad::Tensor<S>::param(std::move(shape), std::move(v), std::move(name));
  params_.push_back(t);
  return t;
}

template <typename S>
PolicyNet<S> PolicyNet<S>::init(const TransformerConfig& cfg, const NormStats& stats,
                                bool mask_object, uint64_t seed) {
  cfg.validate();
  if (stats.proprio_mean.size() != cfg.dof || stats.action_mean.size() != cfg.dof)
    throw std::invalid_argument("normalization stats do not match dof");
  PolicyNet net;
  net.cfg_ = cfg;
  net.stats_ = stats;
  net.mask_object_ = mask_object;

  Rng rng(mix64(seed ^ 0x706f6c696379ull));
  const int h = cfg.hidden, ph = cfg.pointnet_hidden;
  const double std0 = 0.02;

  net.add_param({cfg.dof, h}, "proprio.w", rng, std0);
  net.add_param({h}, "proprio.b", rng, 0.0);
  net.add_param({3, ph}, "pointnet.w1", rng, std0);
  net.add_param({ph}, "pointnet.b1", rng, 0.0);
  net.add_param({ph, ph}, "pointnet.w2", rng, std0);
  net.add_param({ph}, "pointnet.b2", rng, 0.0);
  net.add_param({ph, h}, "pointnet.proj.w", rng, std0);
  net.add_param({h}, "pointnet.proj.b", rng, 0.0);
  net.add_param({1, h}, "pad_token", rng, std0);
  net.add_param({1, h}, "mask_token", rng, std0);
  net.add_param({2 * cfg.context, h}, "pos_embed", rng, std0);
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    net.add_param({h}, p + "ln1.g", rng, -1.0);
    net.add_param({h}, p + "ln1.b", rng, 0.0);
    net.add_param({h, 3 * h}, p + "attn.qkv.w", rng, std0);
    net.add_param({3 * h}, p + "attn.qkv.b", rng, 0.0);
    net.add_param({h, h}, p + "attn.proj.w", rng, std0);
    net.add_param({h}, p + "attn.proj.b", rng, 0.0);
    net.add_param({h}, p + "ln2.g", rng, -1.0);
    net.add_param({h}, p + "ln2.b", rng, 0.0);
    net.add_param({h, 4 * h}, p + "mlp.fc.w", rng, std0);
    net.add_param({4 * h}, p + "mlp.fc.b", rng, 0.0);
    net.add_param({4 * h, h}, p + "mlp.proj.w", rng, std0);
    net.add_param({h}, p + "mlp.proj.b", rng, 0.0);
  }
  net.add_param({h}, "ln_f.g", rng, -1.0);
  net.add_param({h}, "ln_f.b", rng, 0.0);
  net.add_param({h, cfg.dof}, "head.w", rng, std0);
  net.add_param({cfg.dof}, "head.b", rng, 0.0);
  return net;
}

template <typename S>
grad::Tensor<S> PolicyNet<S>::param(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name() == name) return p;
  throw std::invalid_argument("no parameter named " + name);
}

template <typename S>
std::vector<grad::Tensor<S>> PolicyNet<S>::tokenizer_params() const {
  std::vector<grad::Tensor<S>> out;
  for (const auto& p : params_) {
    const auto& n = p.name();
    if (n.rfind("proprio.", 0) == 0 || n.rfind("pointnet.", 0) == 0 ||
        n == "pad_token" || n == "mask_token")
      out.push_back(p);
  }
  return out;
}

template <typename S>
void PolicyNet<S>::add_value_head(uint64_t seed) {
  if (has_value_head_) return;
  Rng rng(mix64(seed ^ 0x76616c7565ull));
  add_param({cfg_.hidden, 1}, "value.w", rng, 0.02);
  add_param({1}, "value.b", rng, 0.0);
  has_value_head_ = true;
}

template <typename S>
grad::Tensor<S> PolicyNet<S>::tokens(const BatchInput<S>& in, bool detached) const {
  using namespace grad;
  const int B = in.batch, L = in.context;
  if (L != cfg_.context) throw std::invalid_argument("batch context mismatch");
  const int rows = B * L;
  if (in.proprio.size() != size_t(rows) * cfg_.dof ||
      in.clouds.size() != size_t(rows) * cfg_.n_points * 3 ||
      in.pad.size() != size_t(rows))
    throw std::invalid_argument("batch input shapes are inconsistent");

  Tensor<S> xp = Tensor<S>::from({rows, cfg_.dof}, in.proprio);
  Tensor<S> ptok =
      add_rowwise(matmul(xp, param("proprio.w")), param("proprio.b"));
  ptok = blend_rows(ptok, in.pad, param("pad_token"));

  Tensor<S> ctok;
  if (mask_object_) {
    ctok = tile_row(param("mask_token"), rows);
  } else {
    Tensor<S> xc = Tensor<S>::from({rows * cfg_.n_points, 3}, in.clouds);
    Tensor<S> h1 =
        gelu(add_rowwise(matmul(xc, param("pointnet.w1")), param("pointnet.b1")));
    Tensor<S> h2 =
        gelu(add_rowwise(matmul(h1, param("pointnet.w2")), param("pointnet.b2")));
    Tensor<S> pooled = maxpool_rows(h2, cfg_.n_points);
    ctok = add_rowwise(matmul(pooled, param("pointnet.proj.w")),
                       param("pointnet.proj.b"));
    ctok = blend_rows(ctok, in.pad, param("pad_token"));
  }

  // Interleave (proprio_t, cloud_t) per timestep.
  Tensor<S> cat = concat_rows(ptok, ctok);
  std::vector<int> order(size_t(rows) * 2);
  for (int w = 0; w < B; ++w)
    for (int t = 0; t < L; ++t) {
      order[size_t(w) * 2 * L + 2 * t] = w * L + t;
      order[size_t(w) * 2 * L + 2 * t + 1] = rows + w * L + t;
    }
  Tensor<S> tok = gather_rows(cat, order);
  if (detached) tok = detach(tok);
  return add_tiled(tok, param("pos_embed"));
}

template <typename S>
grad::Tensor<S> PolicyNet<S>::trunk(const grad::Tensor<S>& tok, int batch) const {
  using namespace grad;
  const int T = 2 * cfg_.context;
  Tensor<S> x = tok;
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    Tensor<S> a = layernorm(x, param(p + "ln1.g"), param(p + "ln1.b"));
    a = add_rowwise(matmul(a, param(p + "attn.qkv.w")), param(p + "attn.qkv.b"));
    a = causal_attention(a, batch, T, cfg_.heads);
    a = add_rowwise(matmul(a, param(p + "attn.proj.w")), param(p + "attn.proj.b"));
    x = add(x, a);
    Tensor<S> m = layernorm(x, param(p + "ln2.g"), param(p + "ln2.b"));
    m = gelu(add_rowwise(matmul(m, param(p + "mlp.fc.w")), param(p + "mlp.fc.b")));
    m = add_rowwise(matmul(m, param(p + "mlp.proj.w")), param(p + "mlp.proj.b"));
    x = add(x, m);
  }
  return layernorm(x, param("ln_f.g"), param("ln_f.b"));
}

template <typename S>
grad::Tensor<S> PolicyNet<S>::action_head(const grad::Tensor<S>& trunk_out) const {
  // Cloud token (the later of each timestep pair) carries the prediction.
  const int rows = trunk_out.rows();
  std::vector<int> cloud_rows(rows / 2);
  for (int i = 0; i < rows / 2; ++i) cloud_rows[i] = 2 * i + 1;
  auto picked = grad::gather_rows(trunk_out, cloud_rows);
  return grad::add_rowwise(grad::matmul(picked, param("head.w")), param("head.b"));
}

template <typename S>
grad::Tensor<S> PolicyNet<S>::forward_values(const BatchInput<S>& in) const {
  if (!has_value_head_) throw std::logic_error("no value head attached");
  auto out = trunk(tokens(in, true), in.batch);
  const int T = 2 * cfg_.context;
  std::vector<int> last_rows(in.batch);
  for (int w = 0; w < in.batch; ++w) last_rows[w] = w * T + (T - 1);
  auto picked = grad::gather_rows(out, last_rows);
  return grad::add_rowwise(grad::matmul(picked, param("value.w")), param("value.b"));
}

template <typename S>
typename PolicyNet<S>::ActorCritic PolicyNet<S>::forward_actor_critic(
    const BatchInput<S>& in) const {
  ActorCritic ac;
  ac.actions = forward_actions(in);
  ac.values = forward_values(in);
  return ac;
}

template <typename S>
typename hop::BatchInput<S> PolicyNet<S>::make_batch(
    const std::vector<std::vector<const Observation*>>& windows) const {
  BatchInput<S> in;
  in.batch = static_cast<int>(windows.size());
  in.context = cfg_.context;
  const int L = cfg_.context, N = cfg_.n_points;
  in.proprio.assign(size_t(in.batch) * L * cfg_.dof, S(0));
  in.clouds.assign(size_t(in.batch) * L * N * 3, S(0));
  in.pad.assign(size_t(in.batch) * L, 1);
  in.row_weight.assign(size_t(in.batch) * L, S(0));

  for (int w = 0; w < in.batch; ++w) {
    const auto& win = windows[w];
    if (static_cast<int>(win.size()) > L)
      throw std::invalid_argument("window longer than the context");
    const int offset = L - static_cast<int>(win.size());  // left padding
    for (size_t k = 0; k < win.size(); ++k) {
      const Observation& o = *win[k];
      const int row = w * L + offset + static_cast<int>(k);
      in.pad[row] = 0;
      in.row_weight[row] = S(1);
      for (int i = 0; i < cfg_.dof; ++i)
        in.proprio[size_t(row) * cfg_.dof + i] =
            S((o.proprio[i] - stats_.proprio_mean[i]) / stats_.proprio_std[i]);
      if (o.object_points.rows() != N)
        throw std::invalid_argument("observation cloud size mismatch");
      for (int p = 0; p < N; ++p)
        for (int c = 0; c < 3; ++c)
          in.clouds[(size_t(row) * N + p) * 3 + c] = S(o.object_points(p, c));
    }
  }
  return in;
}

template <typename S>
std::vector<S> PolicyNet<S>::normalize_actions(
    const std::vector<const JointVector*>& actions,
    const std::vector<uint8_t>& pad) const {
  if (actions.size() != pad.size())
    throw std::invalid_argument("normalize_actions: length mismatch");
  std::vector<S> out(actions.size() * cfg_.dof, S(0));
  for (size_t r = 0; r < actions.size(); ++r) {
    if (pad[r]) continue;
    for (int i = 0; i < cfg_.dof; ++i)
      out[r * cfg_.dof + i] =
          S(((*actions[r])[i] - stats_.action_mean[i]) / stats_.action_std[i]);
  }
  return out;
}

template <typename S>
JointVector PolicyNet<S>::denormalize_action(const Eigen::VectorXd& a_norm) const {
  return stats_.action_mean.array() + a_norm.array() * stats_.action_std.array();
}

template <typename S>
Eigen::VectorXd PolicyNet<S>::normalize_action(const JointVector& a) const {
  return (a - stats_.action_mean).array() / stats_.action_std.array();
}

template <typename S>
JointVector PolicyNet<S>::act(const std::vector<Observation>& window) const {
  std::vector<const Observation*> ptrs;
  const int start = std::max(0, int(window.size()) - cfg_.context);
  for (size_t i = start; i < window.size(); ++i) ptrs.push_back(&window[i]);
  const auto in = make_batch({ptrs});
  const auto out = const_cast<PolicyNet*>(this)->forward_actions(in);
  Eigen::VectorXd a(cfg_.dof);
  const int last = cfg_.context - 1;
  for (int i = 0; i < cfg_.dof; ++i)
    a[i] = double(out.value()[size_t(last) * cfg_.dof + i]);
  return denormalize_action(a);
}

template <typename S>
PolicyNet<S> PolicyNet<S>::clone() const {
  PolicyNet out;
  out.cfg_ = cfg_;
  out.stats_ = stats_;
  out.mask_object_ = mask_object_;
  out.has_value_head_ = has_value_head_;
  for (const auto& p : params_)
    out.params_.push_back(grad::Tensor<S>::param(p.shape(), p.value(), p.name()));
  return out;
}

}  // namespace hop
