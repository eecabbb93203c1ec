#include "hop/runconfig.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace hop {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known,
                    const std::string& where) {
  for (const auto& [key, _] : j.items())
    if (!known.count(key))
      throw std::invalid_argument("config: unknown key '" + key + "' in " + where);
}

Vector3d vec3(const json& j, const Vector3d& fallback) {
  if (j.is_null()) return fallback;
  if (!j.is_array() || j.size() != 3)
    throw std::invalid_argument("config: expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Vector3d get_vec3(const json& j, const char* key, const Vector3d& fallback) {
  return j.contains(key) ? vec3(j.at(key), fallback) : fallback;
}

int resolve_link(const KinematicChain& chain, const json& v, const std::string& where) {
  if (v.is_number_integer()) {
    const int idx = v.get<int>();
    if (idx < -1 || idx >= chain.dof())
      throw std::invalid_argument("config: link index out of range in " + where);
    return idx;
  }
  const auto name = v.get<std::string>();
  const int idx = chain.link_index(name);
  if (idx < 0)
    throw std::invalid_argument("config: no link named '" + name + "' in " + where);
  return idx;
}

ObjectSpec parse_object(const json& j) {
  ObjectSpec spec;
  if (j.is_null()) return spec;
  reject_unknown(j, {"shape", "size", "surface_points"}, "object");
  if (j.contains("shape")) {
    const auto s = j.at("shape").get<std::string>();
    if (s == "box")
      spec.shape = ObjectSpec::Shape::kBox;
    else if (s == "sphere")
      spec.shape = ObjectSpec::Shape::kSphere;
    else if (s == "cylinder")
      spec.shape = ObjectSpec::Shape::kCylinder;
    else
      throw std::invalid_argument("config: unknown object shape '" + s + "'");
  }
  spec.size = get_vec3(j, "size", spec.size);
  spec.n_surface_points = j.value("surface_points", spec.n_surface_points);
  return spec;
}

PhaseRange parse_phase(const json& j, PhaseRange fallback) {
  if (j.is_null()) return fallback;
  if (!j.is_array() || j.size() != 2)
    throw std::invalid_argument("config: phase range must be [lo, hi]");
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace

std::string hash_config_text(const std::string& json_text) {
  const std::string canonical = json::parse(json_text).dump();
  uint64_t h = 0xcbf29ce484222325ull;
  for (const unsigned char c : canonical) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  std::ostringstream ss;
  ss << std::hex << h;
  return ss.str();
}

std::vector<KeypointBinding> default_bindings(const KinematicChain& chain) {
  std::vector<KeypointBinding> out;
  // Palm anchor: a link literally named "palm", else the last arm-ish link
  // before any fingers, else the last link.
  int palm = chain.link_index("palm");
  std::vector<int> tips;
  for (int i = 0; i < chain.dof(); ++i) {
    const auto& name = chain.links()[i].name;
    if (name.size() > 4 && name.substr(name.size() - 4) == "_tip") tips.push_back(i);
  }
  if (palm < 0) {
    for (int i = 0; i < chain.dof(); ++i)
      if (chain.links()[i].name == "link7") palm = i;
  }
  if (palm < 0) palm = tips.empty() ? chain.dof() - 1 : 0;

  out.push_back({0, palm, {0, 0, 0.05}, 2.0});
  if (tips.empty()) return out;
  for (int k = 1; k <= 5; ++k) {
    const int tip = tips[std::min<size_t>(k - 1, tips.size() - 1)];
    const auto& cap = chain.links()[tip].capsule;
    out.push_back({k, tip, cap.p1, 1.0});
  }
  return out;
}

RunConfig parse_run_config(const std::string& json_text, const std::string& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown(doc,
                 {"seed", "chain", "bindings", "scene", "retarget", "synth", "model",
                  "pretrain", "bc", "task", "rl"},
                 "the top level");
  if (!doc.contains("seed"))
    throw std::invalid_argument("config: 'seed' is mandatory");

  RunConfig cfg;
  cfg.raw_text = json_text;
  cfg.config_hash = hash_config_text(json_text);
  cfg.seed = doc.at("seed").get<uint64_t>();

  cfg.chain_path = doc.value("chain", std::string("data/mini5.chain.json"));
  fs::path chain_file(cfg.chain_path);
  if (chain_file.is_relative() && !fs::exists(chain_file) && !base_dir.empty())
    chain_file = fs::path(base_dir) / chain_file;
  cfg.chain = std::make_shared<KinematicChain>(load_chain(chain_file.string()));
  const auto& chain = *cfg.chain;

  // Bindings.
  if (doc.contains("bindings")) {
    for (const auto& b : doc.at("bindings")) {
      reject_unknown(b, {"keypoint", "link", "offset", "weight"}, "bindings[]");
      KeypointBinding kb;
      kb.hand_keypoint_index = b.at("keypoint").get<int>();
      kb.link = resolve_link(chain, b.at("link"), "bindings[]");
      kb.local_offset = get_vec3(b, "offset", Vector3d::Zero());
      kb.weight = b.value("weight", 1.0);
      cfg.bindings.push_back(kb);
    }
  } else {
    cfg.bindings = default_bindings(chain);
  }
  validate_bindings(chain, cfg.bindings);

  // Scene.
  {
    const json j = doc.value("scene", json::object());
    reject_unknown(j, {"table_center", "table_half_extents", "has_table", "kp", "kd", "dt"},
                   "scene");
    cfg.scene.chain = cfg.chain.get();
    cfg.scene.table.center = get_vec3(j, "table_center", {0.65, 0, 0.2});
    cfg.scene.table.half_extents = get_vec3(j, "table_half_extents", {0.25, 0.35, 0.2});
    cfg.scene.has_table = j.value("has_table", true);
    cfg.scene.dt = j.value("dt", 0.05);
    cfg.scene.gains = PDGains::uniform(chain.dof(), j.value("kp", 100.0),
                                       j.value("kd", 20.0));
    cfg.scene.validate();
  }

  // Retargeting.
  {
    const json j = doc.value("retarget", json::object());
    reject_unknown(j,
                   {"lambda", "runs_per_clip", "max_keypoint_error", "metric", "lbfgs",
                    "scene_randomization", "n_points", "workers"},
                   "retarget");
    cfg.problem.chain = cfg.chain.get();
    cfg.problem.bindings = cfg.bindings;
    cfg.problem.lambda = j.value("lambda", 0.05);
    cfg.retarget.runs_per_clip = j.value("runs_per_clip", 700);
    cfg.retarget.max_keypoint_error = j.value("max_keypoint_error", 0.03);
    cfg.retarget.n_points = j.value("n_points", 64);
    cfg.retarget.workers = j.value("workers", 1);
    const auto metric = j.value("metric", std::string("worst"));
    if (metric == "worst")
      cfg.retarget.metric = ErrorMetric::kWorstKeypoint;
    else if (metric == "mean")
      cfg.retarget.metric = ErrorMetric::kMeanKeypoint;
    else
      throw std::invalid_argument("config: retarget.metric must be worst or mean");
    if (j.contains("lbfgs")) {
      const auto& l = j.at("lbfgs");
      reject_unknown(l, {"memory", "max_iters", "grad_tol", "max_step"}, "retarget.lbfgs");
      cfg.retarget.lbfgs.memory = l.value("memory", 8);
      cfg.retarget.lbfgs.max_iters = l.value("max_iters", 100);
      cfg.retarget.lbfgs.grad_tol = l.value("grad_tol", 1e-8);
      cfg.retarget.lbfgs.max_step = l.value("max_step", 0.5);
    }
    if (j.contains("scene_randomization")) {
      const auto& s = j.at("scene_randomization");
      reject_unknown(s, {"table_distance", "table_jitter", "init_joint_noise"},
                     "retarget.scene_randomization");
      if (s.contains("table_distance")) {
        const auto& d = s.at("table_distance");
        cfg.retarget.scene_randomization.table_distance_lo = d[0].get<double>();
        cfg.retarget.scene_randomization.table_distance_hi = d[1].get<double>();
      }
      cfg.retarget.scene_randomization.table_jitter = s.value("table_jitter", 0.2);
      cfg.retarget.scene_randomization.init_joint_noise =
          s.value("init_joint_noise", 0.3);
    }
    cfg.retarget.rng_seed = cfg.seed;
  }

  // Synthetic clips.
  {
    const json j = doc.value("synth", json::object());
    reject_unknown(j,
                   {"n_clips", "fps", "arm_dof", "palm_link", "object", "object_center",
                    "object_jitter", "palm_standoff", "lift_height", "start_pose_noise",
                    "finger_closed", "phases", "carry_probability", "max_hand_speed"},
                   "synth");
    auto& s = cfg.synth;
    s.chain = cfg.chain.get();
    s.bindings = cfg.bindings;
    s.n_clips = j.value("n_clips", 200);
    s.fps = j.value("fps", 20.0);
    s.arm_dof = j.value("arm_dof", chain.dof() >= 23 ? 7 : 3);
    s.palm_link = j.contains("palm_link")
                      ? resolve_link(chain, j.at("palm_link"), "synth.palm_link")
                      : cfg.bindings.front().link;
    s.object = parse_object(j.value("object", json()));
    s.object_center = get_vec3(j, "object_center", {0.55, 0.0, 0.45});
    s.object_jitter = get_vec3(j, "object_jitter", {0.08, 0.12, 0.0});
    s.palm_standoff = get_vec3(j, "palm_standoff", {0.0, 0.0, 0.10});
    s.lift_height = j.value("lift_height", 0.25);
    s.start_pose_noise = j.value("start_pose_noise", 0.3);
    if (j.contains("finger_closed")) {
      const auto& f = j.at("finger_closed");
      s.finger_closed_lo = f[0].get<double>();
      s.finger_closed_hi = f[1].get<double>();
    }
    if (j.contains("phases")) {
      const auto& p = j.at("phases");
      reject_unknown(p, {"reach", "grasp_close", "lift", "carry"}, "synth.phases");
      s.reach = parse_phase(p.value("reach", json()), s.reach);
      s.grasp_close = parse_phase(p.value("grasp_close", json()), s.grasp_close);
      s.lift = parse_phase(p.value("lift", json()), s.lift);
      s.carry = parse_phase(p.value("carry", json()), s.carry);
    }
    s.carry_probability = j.value("carry_probability", 0.0);
    s.max_hand_speed = j.value("max_hand_speed", 1.5);
    s.rng_seed = cfg.seed;
  }

  // Model.
  {
    const json j = doc.value("model", json::object());
    reject_unknown(j, {"layers", "heads", "hidden", "context", "n_points", "pointnet_hidden"},
                   "model");
    cfg.model.layers = j.value("layers", 4);
    cfg.model.heads = j.value("heads", 4);
    cfg.model.hidden = j.value("hidden", 192);
    cfg.model.context = j.value("context", 16);
    cfg.model.n_points = j.value("n_points", cfg.retarget.n_points);
    cfg.model.pointnet_hidden = j.value("pointnet_hidden", 64);
    cfg.model.dof = chain.dof();
  }

  // Pretraining.
  {
    const json j = doc.value("pretrain", json::object());
    reject_unknown(j,
                   {"lr", "weight_decay", "batch_size", "steps", "mask_object",
                    "eval_interval", "checkpoint_interval", "val_fraction"},
                   "pretrain");
    cfg.pretrain.lr = j.value("lr", 1e-4);
    cfg.pretrain.weight_decay = j.value("weight_decay", 1e-2);
    cfg.pretrain.batch_size = j.value("batch_size", 128);
    cfg.pretrain.steps = j.value("steps", 9000);
    cfg.pretrain.mask_object = j.value("mask_object", false);
    cfg.pretrain.eval_interval = j.value("eval_interval", 200);
    cfg.pretrain.checkpoint_interval = j.value("checkpoint_interval", 1000);
    cfg.pretrain.seed = cfg.seed;
  }

  // Behavior cloning.
  {
    const json j = doc.value("bc", json::object());
    reject_unknown(j,
                   {"lr", "weight_decay", "batch_size", "steps", "eval_interval",
                    "checkpoint_interval", "val_fraction", "mask_object"},
                   "bc");
    auto& b = cfg.bc.base;
    b.lr = j.value("lr", 1e-4);
    b.weight_decay = j.value("weight_decay", 1e-2);
    b.batch_size = j.value("batch_size", 128);
    b.steps = j.value("steps", 9000);
    b.eval_interval = j.value("eval_interval", 250);
    b.checkpoint_interval = j.value("checkpoint_interval", 1000);
    b.mask_object = j.value("mask_object", false);
    b.seed = cfg.seed;
    cfg.bc.val_fraction = j.value("val_fraction", 0.1);
  }

  // Toy task.
  {
    const json j = doc.value("task", json::object());
    reject_unknown(j,
                   {"object", "object_center", "object_jitter", "lift_threshold",
                    "grasp_radius", "finger_close_frac", "horizon", "reset_noise",
                    "n_points", "arm_dof", "palm_link", "palm_offset", "fingertips",
                    "fingertip_offset", "rewards"},
                   "task");
    auto& t = cfg.task;
    t.object = parse_object(j.value("object", json()));
    t.object_center = get_vec3(j, "object_center", t.object_center);
    t.object_jitter = get_vec3(j, "object_jitter", t.object_jitter);
    t.lift_threshold = j.value("lift_threshold", 0.15);
    t.grasp_radius = j.value("grasp_radius", 0.07);
    t.finger_close_frac = j.value("finger_close_frac", 0.35);
    t.horizon = j.value("horizon", 60);
    t.reset_noise = j.value("reset_noise", 0.3);
    t.n_points = j.value("n_points", 32);
    t.arm_dof = j.value("arm_dof", chain.dof() >= 23 ? 7 : 3);
    if (j.contains("palm_link"))
      t.palm_link = resolve_link(chain, j.at("palm_link"), "task.palm_link");
    else
      t.palm_link = cfg.bindings.front().link;
    t.palm_offset = get_vec3(j, "palm_offset", t.palm_offset);
    if (j.contains("fingertips")) {
      t.fingertip_links.clear();
      for (const auto& f : j.at("fingertips"))
        t.fingertip_links.push_back(resolve_link(chain, f, "task.fingertips"));
    } else {
      t.fingertip_links.clear();
      for (int i = 0; i < chain.dof(); ++i) {
        const auto& name = chain.links()[i].name;
        if (name.size() > 4 && name.substr(name.size() - 4) == "_tip")
          t.fingertip_links.push_back(i);
      }
      if (t.fingertip_links.empty())
        t.fingertip_links.push_back(chain.dof() - 1);
    }
    t.fingertip_offset = get_vec3(j, "fingertip_offset", t.fingertip_offset);
    if (j.contains("rewards")) {
      const auto& r = j.at("rewards");
      reject_unknown(r,
                     {"reach", "alive", "close", "close_radius", "grasp", "lift",
                      "success", "collision"},
                     "task.rewards");
      t.w_reach = r.value("reach", t.w_reach);
      t.alive_bonus = r.value("alive", t.alive_bonus);
      t.w_close = r.value("close", t.w_close);
      t.close_shaping_radius = r.value("close_radius", t.close_shaping_radius);
      t.grasp_bonus = r.value("grasp", t.grasp_bonus);
      t.w_lift = r.value("lift", t.w_lift);
      t.success_bonus = r.value("success", t.success_bonus);
      t.collision_penalty = r.value("collision", t.collision_penalty);
    }
  }

  // PPO.
  {
    const json j = doc.value("rl", json::object());
    reject_unknown(j,
                   {"clip", "gamma", "lambda", "epochs", "minibatches", "rollout_steps",
                    "n_envs", "value_warmup_steps", "init_action_std", "entropy_coef",
                    "vf_coef", "lr", "learn_std", "moving_average_actions", "ma_beta",
                    "max_env_steps", "success_window", "target_success"},
                   "rl");
    auto& r = cfg.rl;
    r.clip = j.value("clip", 0.2);
    r.gae_gamma = j.value("gamma", 0.99);
    r.gae_lambda = j.value("lambda", 0.95);
    r.epochs = j.value("epochs", 4);
    r.minibatches = j.value("minibatches", 4);
    r.rollout_steps = j.value("rollout_steps", 128);
    r.n_envs = j.value("n_envs", 8);
    r.value_warmup_steps = j.value("value_warmup_steps", 200);
    r.init_action_std = j.value("init_action_std", 0.1);
    r.entropy_coef = j.value("entropy_coef", 0.0);
    r.vf_coef = j.value("vf_coef", 0.5);
    r.lr = j.value("lr", 3e-4);
    r.learn_std = j.value("learn_std", true);
    r.moving_average_actions = j.value("moving_average_actions", false);
    r.ma_beta = j.value("ma_beta", 0.8);
    r.max_env_steps = j.value("max_env_steps", int64_t(120000));
    r.success_window = j.value("success_window", 25);
    r.target_success = j.value("target_success", 0.5);
    r.seed = cfg.seed;
  }

  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), fs::path(path).parent_path().string());
}

}  // namespace hop
