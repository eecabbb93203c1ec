// hopc: operate the hand-object pretraining pipeline end to end.
// Subcommands: synth, retarget, pretrain, finetune-bc, finetune-rl, eval,
// stats, export. Human-readable progress goes to stderr; machine-readable
// results are a single JSON line on stdout.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "hop/bc.hpp"
#include "hop/ppo.hpp"
#include "hop/runconfig.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hop;

namespace {

std::string resolve(const std::string& path, bool for_output) {
  if (path.empty() || fs::path(path).is_absolute()) return path;
  if (!for_output && fs::exists(path)) return path;
  if (const char* root = std::getenv("HOP_DATA_DIR")) {
    if (for_output || fs::exists(fs::path(root) / path))
      return (fs::path(root) / path).string();
  }
  return path;
}

void write_text(const std::string& path, const std::string& text) {
  if (fs::path(path).has_parent_path())
    fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

// Every artifact directory records how it was produced; `stats --lineage`
// rebuilds the pipeline DAG from these.
void write_run_manifest(const std::string& out_dir, const std::string& command,
                        const RunConfig& cfg, const std::vector<std::string>& inputs,
                        const std::vector<std::string>& outputs,
                        const json& extra = json::object()) {
  json doc;
  doc["command"] = command;
  doc["config_hash"] = cfg.config_hash;
  doc["seed"] = cfg.seed;
  doc["inputs"] = inputs;
  doc["outputs"] = outputs;
  doc["config"] = json::parse(cfg.raw_text);
  for (const auto& [k, v] : extra.items()) doc[k] = v;
  write_text((fs::path(out_dir) / "run_manifest.json").string(), doc.dump(2));
}

struct CommonArgs {
  std::string config_path;
  uint64_t seed_override = 0;
  bool has_seed_override = false;
  int workers = 0;

  RunConfig load() const {
    const std::string path = resolve(config_path, false);
    RunConfig cfg = load_run_config(path);
    if (has_seed_override) {
      json doc = json::parse(cfg.raw_text);
      doc["seed"] = seed_override;
      cfg = parse_run_config(doc.dump(2), fs::path(path).parent_path().string());
    }
    if (workers > 0) cfg.retarget.workers = workers;
    return cfg;
  }
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "run configuration file")->required();
  cmd->add_option("--seed", args.seed_override, "override the config seed")
      ->each([&args](const std::string&) { args.has_seed_override = true; });
  cmd->add_option("--workers", args.workers, "worker threads for batch commands");
}

int cmd_synth(const CommonArgs& common, const std::string& out) {
  const auto cfg = common.load();
  const std::string out_dir = resolve(out, true);
  fs::create_directories(out_dir);

  const auto clips = synth_clips(cfg.synth);
  std::vector<std::string> outputs;
  for (size_t i = 0; i < clips.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "clip_%04zu.json", i);
    save_clip(clips[i], (fs::path(out_dir) / name).string());
    outputs.push_back(name);
  }
  write_run_manifest(out_dir, "synth", cfg, {}, outputs, {{"n_clips", clips.size()}});
  std::cerr << "synth: wrote " << clips.size() << " clips to " << out_dir << "\n";
  std::cout << json{{"command", "synth"},
                    {"out", out_dir},
                    {"n_clips", clips.size()},
                    {"config_hash", cfg.config_hash}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_retarget(const CommonArgs& common, const std::string& clips_dir,
                 const std::string& out) {
  const auto cfg = common.load();
  const std::string in_dir = resolve(clips_dir, false);
  const std::string out_dir = resolve(out, true);
  fs::create_directories(out_dir);

  std::vector<std::string> clip_files;
  for (const auto& e : fs::directory_iterator(in_dir))
    if (e.path().extension() == ".json" &&
        e.path().filename().string().rfind("clip_", 0) == 0)
      clip_files.push_back(e.path().string());
  std::sort(clip_files.begin(), clip_files.end());
  if (clip_files.empty())
    throw std::runtime_error("no clip_*.json files found in " + in_dir);

  std::vector<SensorimotorTrajectory> kept;
  std::ostringstream runs_csv;
  runs_csv << "clip,run,seed,length,max_error,accepted_reason\n";
  size_t total_runs = 0, accepted = 0;

  for (size_t c = 0; c < clip_files.size(); ++c) {
    const auto clip = load_clip(clip_files[c]);
    RetargetConfig rcfg = cfg.retarget;
    rcfg.rng_seed = mix64(cfg.seed ^ mix64(c + 1));
    const auto results = randomized_batch(cfg.problem, clip, rcfg, cfg.scene);
    for (size_t r = 0; r < results.size(); ++r) {
      const auto& res = results[r];
      runs_csv << fs::path(clip_files[c]).filename().string() << "," << r << ","
               << res.seed << "," << res.trajectory.length() << "," << res.max_error
               << "," << reject_reason_name(res.reason) << "\n";
      ++total_runs;
      accepted += res.accepted ? 1 : 0;
    }
    for (auto& t : prune(results, rcfg)) kept.push_back(std::move(t));
    std::cerr << "retarget: clip " << (c + 1) << "/" << clip_files.size()
              << ", kept so far " << kept.size() << "\n";
  }

  write_text((fs::path(out_dir) / "runs.csv").string(), runs_csv.str());
  if (kept.empty())
    throw std::runtime_error("retargeting kept no trajectories; see runs.csv");

  auto manifest = write_dataset(kept, out_dir, cfg.chain->lower_limits(),
                                cfg.chain->upper_limits());
  manifest.config_hash = cfg.config_hash;
  manifest.seed = cfg.seed;
  manifest.inputs = {in_dir};
  manifest.rng_provenance = "seed-split per clip and run";
  save_manifest(manifest, (fs::path(out_dir) / "manifest.json").string());
  write_run_manifest(out_dir, "retarget", cfg, {in_dir},
                     {"manifest.json", "runs.csv"},
                     {{"kept", kept.size()},
                      {"total_runs", total_runs},
                      {"acceptance_fraction", double(accepted) / double(total_runs)}});

  std::cerr << "retarget: kept " << kept.size() << "/" << total_runs << " runs\n";
  std::cout << json{{"command", "retarget"},
                    {"out", out_dir},
                    {"kept", kept.size()},
                    {"total_runs", total_runs},
                    {"acceptance_fraction", double(accepted) / double(total_runs)},
                    {"config_hash", cfg.config_hash}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_pretrain(const CommonArgs& common, const std::string& dataset,
                 const std::string& out) {
  const auto cfg = common.load();
  const std::string data_dir = resolve(dataset, false);
  const std::string out_dir = resolve(out, true);
  fs::create_directories(out_dir);

  DatasetManifest manifest;
  const auto all = read_dataset(data_dir, &manifest);
  if (manifest.dof != cfg.model.dof)
    throw std::runtime_error("dataset dof (" + std::to_string(manifest.dof) +
                             ") does not match the configured chain (" +
                             std::to_string(cfg.model.dof) + ")");
  TransformerConfig model = cfg.model;
  model.n_points = manifest.n_points;

  const auto [train_m, val_m] = split(manifest, 0.9, 0.1, cfg.seed);
  std::vector<SensorimotorTrajectory> train, val;
  for (const auto& e : train_m.index) train.push_back(read_trajectory(data_dir, e));
  for (const auto& e : val_m.index) val.push_back(read_trajectory(data_dir, e));
  if (train.empty()) train = all;
  if (val.empty()) val = train;

  CheckpointState state;
  state.config_echo = cfg.raw_text;
  state.config_hash = cfg.config_hash;
  state.seed = cfg.seed;
  state.inputs = {data_dir};

  const auto result =
      pretrain(train, val, model, cfg.pretrain, std::nullopt,
               [&](int64_t step, const PolicyNet<float>& net) {
                 char name[64];
                 std::snprintf(name, sizeof(name), "step_%06lld.hopc",
                               (long long)step);
                 save_checkpoint(net, (fs::path(out_dir) / name).string(), state);
                 std::cerr << "pretrain: checkpoint " << name << "\n";
               });

  save_checkpoint(result.net, (fs::path(out_dir) / "final.hopc").string(), state);
  write_text((fs::path(out_dir) / "curve.csv").string(), curve_to_csv(result.curve));
  write_run_manifest(out_dir, "pretrain", cfg, {data_dir}, {"final.hopc", "curve.csv"},
                     {{"final_train_l1", result.final_train_l1},
                      {"best_val_l1", result.best_val_l1},
                      {"mask_object", cfg.pretrain.mask_object}});

  std::cout << json{{"command", "pretrain"},
                    {"out", out_dir},
                    {"final_train_l1", result.final_train_l1},
                    {"best_val_l1", result.best_val_l1},
                    {"config_hash", cfg.config_hash}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_finetune_bc(const CommonArgs& common, const std::string& demos,
                    const std::string& init, const std::string& out) {
  const auto cfg = common.load();
  const std::string demo_dir = resolve(demos, false);
  const std::string out_dir = resolve(out, true);
  fs::create_directories(out_dir);

  DatasetManifest manifest;
  const auto corpus = read_dataset(demo_dir, &manifest);

  std::optional<PolicyNet<float>> init_net;
  TransformerConfig model = cfg.model;
  model.n_points = manifest.n_points;
  BcConfig bcfg = cfg.bc;
  std::vector<std::string> inputs = {demo_dir};
  if (!init.empty()) {
    const std::string init_path = resolve(init, false);
    init_net = load_checkpoint<float>(init_path);
    check_checkpoint_compatible(*init_net, manifest.dof, manifest.n_points);
    model = init_net->config();
    bcfg.base.mask_object = init_net->mask_object();
    inputs.push_back(init_path);
  }

  CheckpointState state;
  state.config_echo = cfg.raw_text;
  state.config_hash = cfg.config_hash;
  state.seed = cfg.seed;
  state.inputs = inputs;

  const auto result =
      bc_finetune(std::move(init_net), corpus, model, bcfg,
                  [&](int64_t step, const PolicyNet<float>& net) {
                    char name[64];
                    std::snprintf(name, sizeof(name), "step_%06lld.hopc",
                                  (long long)step);
                    save_checkpoint(net, (fs::path(out_dir) / name).string(), state);
                    std::cerr << "finetune-bc: checkpoint " << name << "\n";
                  });

  save_checkpoint(result.net, (fs::path(out_dir) / "best.hopc").string(), state);
  write_text((fs::path(out_dir) / "curve.csv").string(), curve_to_csv(result.curve));
  write_run_manifest(out_dir, "finetune-bc", cfg, inputs, {"best.hopc", "curve.csv"},
                     {{"best_val_l1", result.best_val_l1},
                      {"best_step", result.best_step}});

  std::cout << json{{"command", "finetune-bc"},
                    {"out", out_dir},
                    {"best_val_l1", result.best_val_l1},
                    {"best_step", result.best_step},
                    {"config_hash", cfg.config_hash}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_finetune_rl(const CommonArgs& common, const std::string& init,
                    const std::string& out) {
  const auto cfg = common.load();
  const std::string out_dir = resolve(out, true);
  fs::create_directories(out_dir);

  std::optional<PolicyNet<float>> init_net;
  std::vector<std::string> inputs;
  if (!init.empty()) {
    const std::string init_path = resolve(init, false);
    init_net = load_checkpoint<float>(init_path);
    inputs.push_back(init_path);
  }

  const auto result =
      train_rl(std::move(init_net), cfg.model, cfg.scene, cfg.task, cfg.rl);

  CheckpointState state;
  state.config_echo = cfg.raw_text;
  state.config_hash = cfg.config_hash;
  state.seed = cfg.seed;
  state.inputs = inputs;
  save_checkpoint(result.net, (fs::path(out_dir) / "final.hopc").string(), state);
  write_text((fs::path(out_dir) / "curve.csv").string(), rl_curve_to_csv(result.curve));
  write_run_manifest(out_dir, "finetune-rl", cfg, inputs, {"final.hopc", "curve.csv"},
                     {{"steps_to_target", result.steps_to_target},
                      {"mask_object", result.mask_object},
                      {"from_scratch", init.empty()}});

  std::cout << json{{"command", "finetune-rl"},
                    {"out", out_dir},
                    {"steps_to_target", result.steps_to_target},
                    {"mask_object", result.mask_object},
                    {"config_hash", cfg.config_hash}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& common, const std::string& ckpt, int episodes,
             bool random_baseline, bool moving_average) {
  const auto cfg = common.load();
  EvalResult result;
  std::string policy;
  if (random_baseline) {
    result = evaluate_random(cfg.scene, cfg.task, episodes, cfg.seed);
    policy = "random";
  } else {
    if (ckpt.empty()) throw std::runtime_error("eval: --ckpt or --random-baseline required");
    policy = resolve(ckpt, false);
    const auto net = load_checkpoint<float>(policy);
    check_checkpoint_compatible(net, cfg.chain->dof(), cfg.task.n_points);
    result = evaluate(net, cfg.scene, cfg.task, episodes, cfg.seed, moving_average,
                      cfg.rl.ma_beta);
  }
  std::cout << json{{"command", "eval"},
                    {"episodes", episodes},
                    {"success_rate", result.success_rate},
                    {"mean_return", result.mean_return},
                    {"policy", policy},
                    {"config_hash", cfg.config_hash}}
                   .dump()
            << "\n";
  return 0;
}

void print_lineage(const std::string& artifact, int depth, std::ostream& out) {
  const fs::path p(artifact);
  const fs::path manifest = fs::is_directory(p) ? p / "run_manifest.json"
                                                : p.parent_path() / "run_manifest.json";
  const std::string indent(size_t(depth) * 2, ' ');
  if (!fs::exists(manifest)) {
    out << indent << artifact << " (no manifest)\n";
    return;
  }
  std::ifstream in(manifest);
  json doc;
  in >> doc;
  out << indent << artifact << "  [" << doc.value("command", "?") << ", config "
      << doc.value("config_hash", "?") << ", seed " << doc.value("seed", 0) << "]\n";
  if (doc.contains("inputs"))
    for (const auto& parent : doc.at("inputs"))
      print_lineage(parent.get<std::string>(), depth + 1, out);
}

int cmd_stats(const std::string& dataset, const std::string& runs_csv,
              const std::string& lineage, const std::string& csv_out) {
  if (!lineage.empty()) {
    std::ostringstream ss;
    print_lineage(resolve(lineage, false), 0, ss);
    std::cout << ss.str();
    return 0;
  }
  if (dataset.empty()) throw std::runtime_error("stats: --dataset or --lineage required");
  const std::string dir = resolve(dataset, false);
  std::string runs = runs_csv;
  if (runs.empty() && fs::exists(fs::path(dir) / "runs.csv"))
    runs = (fs::path(dir) / "runs.csv").string();
  const auto report = dataset_stats(dir, runs);
  std::cout << report_to_text(report);
  if (!csv_out.empty()) write_text(resolve(csv_out, true), report_to_csv(report));
  return 0;
}

int cmd_export(const std::vector<std::string>& curves, const std::string& out) {
  std::ostringstream merged;
  merged << "source,step_or_env_steps,col1,col2,col3\n";
  for (const auto& c : curves) {
    const std::string path = resolve(c, false);
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open curve: " + path);
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      int commas = int(std::count(line.begin(), line.end(), ','));
      merged << fs::path(path).parent_path().filename().string() << "," << line;
      for (; commas < 3; ++commas) merged << ",";
      merged << "\n";
    }
  }
  write_text(resolve(out, true), merged.str());
  std::cout << json{{"command", "export"}, {"out", resolve(out, true)}}.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hand-object pretraining pipeline"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string out, clips, dataset, demos, init, ckpt, runs_csv, lineage, csv_out;
  int episodes = 32;
  bool random_baseline = false, moving_average = false;
  std::vector<std::string> curves;

  auto* synth = app.add_subcommand("synth", "generate synthetic hand-object clips");
  add_common(synth, common);
  synth->add_option("--out", out, "output clip directory")->required();

  auto* retarget = app.add_subcommand("retarget", "retarget clips into a dataset");
  add_common(retarget, common);
  retarget->add_option("--clips", clips, "clip directory")->required();
  retarget->add_option("--out", out, "output dataset directory")->required();

  auto* pretrain = app.add_subcommand("pretrain", "pretrain the base policy");
  add_common(pretrain, common);
  pretrain->add_option("--dataset", dataset, "trajectory dataset")->required();
  pretrain->add_option("--out", out, "output checkpoint directory")->required();

  auto* bc = app.add_subcommand("finetune-bc", "behavior-clone on demonstrations");
  add_common(bc, common);
  bc->add_option("--demos", demos, "demonstration dataset")->required();
  bc->add_option("--init", init, "initial checkpoint (omit to train from scratch)");
  bc->add_option("--out", out, "output directory")->required();

  auto* rl = app.add_subcommand("finetune-rl", "PPO on the toy task");
  add_common(rl, common);
  rl->add_option("--init", init, "initial checkpoint (omit to train from scratch)");
  rl->add_option("--out", out, "output directory")->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the toy task");
  add_common(eval, common);
  eval->add_option("--ckpt", ckpt, "checkpoint file");
  eval->add_option("--episodes", episodes, "episodes to run");
  eval->add_flag("--random-baseline", random_baseline, "evaluate random actions");
  eval->add_flag("--moving-average", moving_average, "apply the action smoother");

  auto* stats = app.add_subcommand("stats", "dataset summary or artifact lineage");
  stats->add_option("--dataset", dataset, "dataset directory");
  stats->add_option("--runs", runs_csv, "retargeting run log");
  stats->add_option("--lineage", lineage, "artifact to trace");
  stats->add_option("--csv", csv_out, "also write the summary as CSV");

  auto* exp = app.add_subcommand("export", "merge curve CSVs");
  exp->add_option("--curves", curves, "curve files")->required();
  exp->add_option("--out", out, "merged CSV path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(common, out);
    if (retarget->parsed()) return cmd_retarget(common, clips, out);
    if (pretrain->parsed()) return cmd_pretrain(common, dataset, out);
    if (bc->parsed()) return cmd_finetune_bc(common, demos, init, out);
    if (rl->parsed()) return cmd_finetune_rl(common, init, out);
    if (eval->parsed())
      return cmd_eval(common, ckpt, episodes, random_baseline, moving_average);
    if (stats->parsed()) return cmd_stats(dataset, runs_csv, lineage, csv_out);
    if (exp->parsed()) return cmd_export(curves, out);
  } catch (const std::exception& e) {
    std::cout << json{{"error", e.what()}}.dump() << "\n";
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
