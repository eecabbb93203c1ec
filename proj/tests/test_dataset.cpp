#include <chrono>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "hop/dataset.hpp"
#include "hop/rng.hpp"

using namespace hop;
namespace fs = std::filesystem;

namespace {

// Random trajectory with f32-representable values (storage is f32).
SensorimotorTrajectory random_trajectory(Rng& rng, int len, int dof, int n_pts) {
  SensorimotorTrajectory t;
  t.meta.clip_id = "clip" + std::to_string(rng.uniform_int(1000));
  t.meta.seed = rng.next_u64();
  t.meta.max_error = double(float(rng.uniform(0, 0.01)));
  t.meta.scene_summary = "test-scene";
  for (int k = 0; k < len; ++k) {
    TrajectoryStep s;
    s.obs.proprio.resize(dof);
    s.action.resize(dof);
    for (int i = 0; i < dof; ++i) {
      s.obs.proprio[i] = double(float(rng.uniform(-2, 2)));
      s.action[i] = double(float(rng.uniform(-2, 2)));
    }
    s.obs.object_points.resize(n_pts, 3);
    for (int p = 0; p < n_pts; ++p)
      for (int c = 0; c < 3; ++c)
        s.obs.object_points(p, c) = double(float(rng.uniform(-1, 1)));
    t.steps.push_back(std::move(s));
  }
  return t;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("hopdata_" + std::to_string(Rng(uint64_t(
                             std::chrono::steady_clock::now().time_since_epoch().count()))
                             .next_u64()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("round-trip of 100 random trajectories is bit-identical") {
  Rng rng(101);
  std::vector<SensorimotorTrajectory> trajs;
  for (int i = 0; i < 100; ++i)
    trajs.push_back(random_trajectory(rng, 5 + int(rng.uniform_int(40)), 5, 16));

  TempDir dir;
  const auto manifest = write_dataset(trajs, dir.path.string());
  CHECK(manifest.count() == 100);

  DatasetManifest loaded;
  const auto back = read_dataset(dir.path.string(), &loaded);
  REQUIRE(back.size() == trajs.size());
  for (size_t i = 0; i < trajs.size(); ++i) {
    CHECK(back[i].meta.clip_id == trajs[i].meta.clip_id);
    CHECK(back[i].meta.seed == trajs[i].meta.seed);
    CHECK(back[i].meta.max_error == trajs[i].meta.max_error);
    REQUIRE(back[i].length() == trajs[i].length());
    for (int k = 0; k < back[i].length(); ++k) {
      CHECK(back[i].steps[k].obs.proprio == trajs[i].steps[k].obs.proprio);
      CHECK(back[i].steps[k].obs.object_points == trajs[i].steps[k].obs.object_points);
      CHECK(back[i].steps[k].action == trajs[i].steps[k].action);
    }
  }
}

TEST_CASE("corrupting one byte is detected and localized") {
  Rng rng(7);
  std::vector<SensorimotorTrajectory> trajs;
  for (int i = 0; i < 5; ++i) trajs.push_back(random_trajectory(rng, 20, 4, 8));

  TempDir dir;
  const auto manifest = write_dataset(trajs, dir.path.string());

  // Flip a byte in the middle of the third record's payload.
  const auto& entry = manifest.index[2];
  const fs::path chunk = dir.path / entry.file;
  std::fstream f(chunk, std::ios::in | std::ios::out | std::ios::binary);
  f.seekg(static_cast<std::streamoff>(entry.offset + entry.length / 2));
  char byte;
  f.read(&byte, 1);
  byte ^= 0x40;
  f.seekp(static_cast<std::streamoff>(entry.offset + entry.length / 2));
  f.write(&byte, 1);
  f.close();

  CHECK_THROWS_WITH_AS(read_dataset(dir.path.string()),
                       doctest::Contains("checksum failure"), std::runtime_error);
  // The other records still read cleanly.
  CHECK_NOTHROW(read_trajectory(dir.path.string(), manifest.index[0]));
  CHECK_NOTHROW(read_trajectory(dir.path.string(), manifest.index[4]));
}

TEST_CASE("empty dataset is rejected") {
  TempDir dir;
  CHECK_THROWS_WITH_AS(write_dataset({}, dir.path.string()),
                       doctest::Contains("empty dataset"), std::invalid_argument);
}

TEST_CASE("actions outside chain limits are rejected at write time") {
  Rng rng(3);
  auto t = random_trajectory(rng, 10, 3, 4);
  t.steps[4].action[1] = 5.0;
  TempDir dir;
  const Eigen::VectorXd lo = Eigen::VectorXd::Constant(3, -2.5);
  const Eigen::VectorXd hi = Eigen::VectorXd::Constant(3, 2.5);
  CHECK_THROWS_WITH_AS(write_dataset({t}, dir.path.string(), lo, hi),
                       doctest::Contains("outside chain limits"),
                       std::invalid_argument);
}

TEST_CASE("split is seed-deterministic, disjoint and exhaustive") {
  Rng rng(11);
  std::vector<SensorimotorTrajectory> trajs;
  for (int i = 0; i < 100; ++i) trajs.push_back(random_trajectory(rng, 8, 3, 4));
  TempDir dir;
  const auto manifest = write_dataset(trajs, dir.path.string());

  const auto [train, val] = split(manifest, 0.9, 0.1, 77);
  CHECK(train.count() == 90);
  CHECK(val.count() == 10);

  const auto [train2, val2] = split(manifest, 0.9, 0.1, 77);
  for (size_t i = 0; i < train.index.size(); ++i)
    CHECK(train.index[i].offset == train2.index[i].offset);

  // Union covers every record exactly once.
  std::set<std::pair<std::string, uint64_t>> seen;
  for (const auto& e : train.index) seen.insert({e.file, e.offset});
  for (const auto& e : val.index) seen.insert({e.file, e.offset});
  CHECK(seen.size() == manifest.count());

  CHECK_THROWS_AS(split(manifest, 0.7, 0.1, 1), std::invalid_argument);
}

TEST_CASE("manifest stats match an independent recomputation") {
  Rng rng(19);
  std::vector<SensorimotorTrajectory> trajs;
  for (int i = 0; i < 25; ++i) trajs.push_back(random_trajectory(rng, 30, 6, 8));
  TempDir dir;
  const auto manifest = write_dataset(trajs, dir.path.string());

  // Second pass, straightforward accumulation in long double.
  const int dof = 6;
  std::vector<long double> sum(dof, 0), sq(dof, 0);
  uint64_t n = 0;
  for (const auto& t : trajs)
    for (const auto& s : t.steps) {
      for (int i = 0; i < dof; ++i) {
        sum[i] += s.action[i];
        sq[i] += s.action[i] * s.action[i];
      }
      ++n;
    }
  for (int i = 0; i < dof; ++i) {
    const double mean = double(sum[i] / n);
    const double stddev = std::sqrt(std::max(0.0, double(sq[i] / n) - mean * mean));
    CHECK(std::abs(manifest.stats.action_mean[i] - mean) < 1e-9);
    CHECK(std::abs(manifest.stats.action_std[i] - stddev) < 1e-9);
  }
}

TEST_CASE("stats report for a single 40-step trajectory") {
  Rng rng(23);
  TempDir dir;
  write_dataset({random_trajectory(rng, 40, 3, 4)}, dir.path.string());
  const auto rep = dataset_stats(dir.path.string());
  CHECK(rep.count == 1);
  CHECK(rep.mean_length == doctest::Approx(40));
  CHECK(rep.min_length == 40);
  CHECK(rep.max_length == 40);
  const auto text = report_to_text(rep);
  CHECK(text.find("trajectories: 1") != std::string::npos);
}

TEST_CASE("manifest version mismatch is rejected") {
  Rng rng(29);
  TempDir dir;
  write_dataset({random_trajectory(rng, 4, 2, 4)}, dir.path.string());
  // Doctor the version field.
  const fs::path mpath = dir.path / "manifest.json";
  std::ifstream in(mpath);
  std::string text((std::istreambuf_iterator<char>(in)), {});
  in.close();
  const auto pos = text.find("\"version\": 1");
  REQUIRE(pos != std::string::npos);
  text.replace(pos, 12, "\"version\": 9");
  std::ofstream out(mpath);
  out << text;
  out.close();
  CHECK_THROWS_WITH_AS(read_dataset(dir.path.string()),
                       doctest::Contains("version mismatch"), std::runtime_error);
}
