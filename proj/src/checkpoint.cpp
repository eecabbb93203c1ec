#include "hop/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "json.hpp"

namespace hop {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'H', 'O', 'P', 'C'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& out, uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = char((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

void put_u64(std::ostream& out, uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = char((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

void put_str(std::ostream& out, const std::string& s) {
  put_u32(out, uint32_t(s.size()));
  out.write(s.data(), std::streamsize(s.size()));
}

void put_f32_block(std::ostream& out, const std::vector<float>& data) {
  std::string payload(data.size() * 4, '\0');
  for (size_t i = 0; i < data.size(); ++i) {
    uint32_t bits;
    std::memcpy(&bits, &data[i], 4);
    for (int b = 0; b < 4; ++b) payload[4 * i + b] = char((bits >> (8 * b)) & 0xff);
  }
  put_u32(out, uint32_t(crc32(0, reinterpret_cast<const Bytef*>(payload.data()),
                              payload.size())));
  out.write(payload.data(), std::streamsize(payload.size()));
}

struct In {
  std::ifstream f;
  std::string path;
  explicit In(const std::string& p) : f(p, std::ios::binary), path(p) {
    if (!f) throw std::runtime_error("cannot open checkpoint: " + p);
  }
  void need() {
    if (!f) throw std::runtime_error("truncated checkpoint: " + path);
  }
  uint32_t u32() {
    char b[4];
    f.read(b, 4);
    need();
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(b[i])) << (8 * i);
    return v;
  }
  uint64_t u64() {
    char b[8];
    f.read(b, 8);
    need();
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(uint8_t(b[i])) << (8 * i);
    return v;
  }
  std::string str() {
    const uint32_t n = u32();
    std::string s(n, '\0');
    f.read(s.data(), n);
    need();
    return s;
  }
  std::vector<float> f32_block(size_t count, const std::string& what) {
    const uint32_t stored_crc = u32();
    std::string payload(count * 4, '\0');
    f.read(payload.data(), std::streamsize(payload.size()));
    need();
    const auto crc = uint32_t(
        crc32(0, reinterpret_cast<const Bytef*>(payload.data()), payload.size()));
    if (crc != stored_crc)
      throw std::runtime_error("checkpoint checksum failure in " + what);
    std::vector<float> out(count);
    for (size_t i = 0; i < count; ++i) {
      uint32_t bits = 0;
      for (int b = 0; b < 4; ++b)
        bits |= uint32_t(uint8_t(payload[4 * i + b])) << (8 * b);
      std::memcpy(&out[i], &bits, 4);
    }
    return out;
  }
};

template <typename S>
std::vector<float> to_f32(const std::vector<S>& v) {
  return std::vector<float>(v.begin(), v.end());
}

}  // namespace

template <typename T>
struct PolicyCheckpointAccess {
  static PolicyNet<T> build(const TransformerConfig& cfg, const NormStats& stats,
                            bool mask_object, bool value_head) {
    auto net = PolicyNet<T>::init(cfg, stats, mask_object, 0);
    if (value_head) net.add_value_head(0);
    return net;
  }
};

template <typename S>
void save_checkpoint(const PolicyNet<S>& net, const std::string& path,
                     const CheckpointState& state) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(kMagic, 4);
  put_u32(out, kVersion);

  const auto& cfg = net.config();
  json meta;
  meta["layers"] = cfg.layers;
  meta["heads"] = cfg.heads;
  meta["hidden"] = cfg.hidden;
  meta["context"] = cfg.context;
  meta["dof"] = cfg.dof;
  meta["n_points"] = cfg.n_points;
  meta["pointnet_hidden"] = cfg.pointnet_hidden;
  meta["mask_object"] = net.mask_object();
  meta["value_head"] = net.has_value_head();
  auto vec = [](const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
  };
  meta["stats"] = {{"proprio_mean", vec(net.stats().proprio_mean)},
                   {"proprio_std", vec(net.stats().proprio_std)},
                   {"action_mean", vec(net.stats().action_mean)},
                   {"action_std", vec(net.stats().action_std)}};
  meta["config_hash"] = state.config_hash;
  meta["seed"] = state.seed;
  meta["inputs"] = state.inputs;
  put_str(out, meta.dump());

  put_u32(out, uint32_t(net.params().size()));
  for (const auto& p : net.params()) {
    put_str(out, p.name());
    put_u32(out, uint32_t(p.shape().size()));
    for (int d : p.shape()) put_u32(out, uint32_t(d));
    put_f32_block(out, to_f32(p.value()));
  }

  out.put(state.has_optimizer ? 1 : 0);
  if (state.has_optimizer) {
    if (state.first_moments.size() != net.params().size() ||
        state.second_moments.size() != net.params().size())
      throw std::invalid_argument("optimizer state does not match parameters");
    put_u64(out, uint64_t(state.step));
    for (size_t i = 0; i < net.params().size(); ++i) {
      put_f32_block(out, state.first_moments[i]);
      put_f32_block(out, state.second_moments[i]);
    }
  }
  put_str(out, state.config_echo);
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

template <typename S>
PolicyNet<S> load_checkpoint(const std::string& path, CheckpointState* state_out) {
  In in(path);
  char magic[4];
  in.f.read(magic, 4);
  in.need();
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  const uint32_t version = in.u32();
  if (version != kVersion)
    throw std::runtime_error("checkpoint version mismatch: have " +
                             std::to_string(version));

  json meta;
  try {
    meta = json::parse(in.str());
  } catch (const json::exception& e) {
    throw std::runtime_error("checkpoint metadata corrupt: " + std::string(e.what()));
  }
  TransformerConfig cfg;
  cfg.layers = meta.at("layers").get<int>();
  cfg.heads = meta.at("heads").get<int>();
  cfg.hidden = meta.at("hidden").get<int>();
  cfg.context = meta.at("context").get<int>();
  cfg.dof = meta.at("dof").get<int>();
  cfg.n_points = meta.at("n_points").get<int>();
  cfg.pointnet_hidden = meta.at("pointnet_hidden").get<int>();
  NormStats stats;
  auto vec = [&](const char* name) {
    const auto arr = meta.at("stats").at(name).get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(arr.data(), Eigen::Index(arr.size()))
        .eval();
  };
  stats.proprio_mean = vec("proprio_mean");
  stats.proprio_std = vec("proprio_std");
  stats.action_mean = vec("action_mean");
  stats.action_std = vec("action_std");

  auto net = PolicyCheckpointAccess<S>::build(
      cfg, stats, meta.at("mask_object").get<bool>(), meta.at("value_head").get<bool>());

  const uint32_t n_tensors = in.u32();
  if (n_tensors != net.params().size())
    throw std::runtime_error("checkpoint tensor count mismatch");
  for (uint32_t t = 0; t < n_tensors; ++t) {
    const std::string name = in.str();
    const uint32_t ndims = in.u32();
    std::vector<int> shape(ndims);
    for (auto& d : shape) d = int(in.u32());
    auto p = net.param(name);
    if (p.shape() != shape)
      throw std::runtime_error("checkpoint tensor '" + name + "' has wrong shape");
    const auto data = in.f32_block(p.size(), "tensor '" + name + "'");
    for (size_t i = 0; i < data.size(); ++i) p.value()[i] = S(data[i]);
  }

  CheckpointState state;
  char has_opt = 0;
  in.f.read(&has_opt, 1);
  in.need();
  state.has_optimizer = has_opt != 0;
  if (state.has_optimizer) {
    state.step = int64_t(in.u64());
    for (uint32_t t = 0; t < n_tensors; ++t) {
      const size_t n = net.params()[t].size();
      state.first_moments.push_back(in.f32_block(n, "optimizer m"));
      state.second_moments.push_back(in.f32_block(n, "optimizer v"));
    }
  }
  state.config_echo = in.str();
  state.config_hash = meta.value("config_hash", std::string());
  state.seed = meta.value("seed", uint64_t(0));
  if (meta.contains("inputs"))
    state.inputs = meta.at("inputs").get<std::vector<std::string>>();
  if (state_out) *state_out = state;
  return net;
}

template <typename S>
void check_checkpoint_compatible(const PolicyNet<S>& net, int dof, int n_points) {
  if (net.config().dof != dof)
    throw std::runtime_error("checkpoint dof (" + std::to_string(net.config().dof) +
                             ") does not match dataset dof (" + std::to_string(dof) +
                             ")");
  if (net.config().n_points != n_points)
    throw std::runtime_error("checkpoint n_points (" +
                             std::to_string(net.config().n_points) +
                             ") does not match dataset n_points (" +
                             std::to_string(n_points) + ")");
}

template void save_checkpoint<float>(const PolicyNet<float>&, const std::string&,
                                     const CheckpointState&);
template void save_checkpoint<double>(const PolicyNet<double>&, const std::string&,
                                      const CheckpointState&);
template PolicyNet<float> load_checkpoint<float>(const std::string&, CheckpointState*);
template PolicyNet<double> load_checkpoint<double>(const std::string&, CheckpointState*);
template void check_checkpoint_compatible<float>(const PolicyNet<float>&, int, int);
template void check_checkpoint_compatible<double>(const PolicyNet<double>&, int, int);

}  // namespace hop
