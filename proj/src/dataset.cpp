#include "hop/dataset.hpp"

#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace hop {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'H', 'O', 'P', 'D'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& buf, uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = char((v >> (8 * i)) & 0xff);
  buf.append(b, 4);
}

void put_u64(std::string& buf, uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = char((v >> (8 * i)) & 0xff);
  buf.append(b, 8);
}

void put_f32(std::string& buf, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(buf, bits);
}

void put_f64(std::string& buf, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(buf, bits);
}

void put_string(std::string& buf, const std::string& s) {
  put_u32(buf, static_cast<uint32_t>(s.size()));
  buf.append(s);
}

class Reader {
 public:
  Reader(const char* data, size_t size, std::string what)
      : data_(data), size_(size), what_(std::move(what)) {}

  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(uint8_t(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() {
    const uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64() {
    const uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str() {
    const uint32_t n = u32();
    need(n);
    std::string s(data_ + pos_, n);
    pos_ += n;
    return s;
  }
  size_t pos() const { return pos_; }

 private:
  void need(size_t n) {
    if (pos_ + n > size_)
      throw std::runtime_error("truncated record in " + what_);
  }
  const char* data_;
  size_t size_, pos_ = 0;
  std::string what_;
};

// Record payload: shapes, meta, then row-major f32 proprio/cloud/action data.
std::string encode_record(const SensorimotorTrajectory& t) {
  std::string body;
  const uint32_t T = t.length(), dof = t.dof(), n_pts = t.n_points();
  put_u32(body, T);
  put_u32(body, dof);
  put_u32(body, n_pts);
  put_string(body, t.meta.clip_id);
  put_u64(body, t.meta.seed);
  put_f64(body, t.meta.max_error);
  put_string(body, t.meta.scene_summary);
  for (const auto& s : t.steps)
    for (int i = 0; i < s.obs.proprio.size(); ++i) put_f32(body, float(s.obs.proprio[i]));
  for (const auto& s : t.steps)
    for (Eigen::Index r = 0; r < s.obs.object_points.rows(); ++r)
      for (int c = 0; c < 3; ++c) put_f32(body, float(s.obs.object_points(r, c)));
  for (const auto& s : t.steps)
    for (int i = 0; i < s.action.size(); ++i) put_f32(body, float(s.action[i]));

  std::string rec;
  put_u32(rec, static_cast<uint32_t>(body.size()));
  const auto crc = static_cast<uint32_t>(
      crc32(0, reinterpret_cast<const Bytef*>(body.data()), body.size()));
  put_u32(rec, crc);
  rec += body;
  return rec;
}

SensorimotorTrajectory decode_record(const char* data, size_t size,
                                     const std::string& what) {
  Reader header(data, size, what);
  const uint32_t body_len = header.u32();
  const uint32_t stored_crc = header.u32();
  if (8 + uint64_t(body_len) > size)
    throw std::runtime_error("truncated record in " + what);
  const char* body = data + 8;
  const auto crc = static_cast<uint32_t>(
      crc32(0, reinterpret_cast<const Bytef*>(body), body_len));
  if (crc != stored_crc)
    throw std::runtime_error("checksum failure in " + what);

  Reader r(body, body_len, what);
  SensorimotorTrajectory t;
  const uint32_t T = r.u32(), dof = r.u32(), n_pts = r.u32();
  t.meta.clip_id = r.str();
  t.meta.seed = r.u64();
  t.meta.max_error = r.f64();
  t.meta.scene_summary = r.str();
  t.steps.resize(T);
  for (auto& s : t.steps) {
    s.obs.proprio.resize(dof);
    for (uint32_t i = 0; i < dof; ++i) s.obs.proprio[i] = r.f32();
  }
  for (auto& s : t.steps) {
    s.obs.object_points.resize(n_pts, 3);
    for (uint32_t p = 0; p < n_pts; ++p)
      for (int c = 0; c < 3; ++c) s.obs.object_points(p, c) = r.f32();
  }
  for (auto& s : t.steps) {
    s.action.resize(dof);
    for (uint32_t i = 0; i < dof; ++i) s.action[i] = r.f32();
  }
  return t;
}

json stats_to_json(const NormStats& s) {
  auto vec = [](const Eigen::VectorXd& v) {
    json arr = json::array();
    for (int i = 0; i < v.size(); ++i) arr.push_back(v[i]);
    return arr;
  };
  return {{"proprio_mean", vec(s.proprio_mean)},
          {"proprio_std", vec(s.proprio_std)},
          {"action_mean", vec(s.action_mean)},
          {"action_std", vec(s.action_std)}};
}

NormStats stats_from_json(const json& j) {
  auto vec = [](const json& arr) {
    Eigen::VectorXd v(arr.size());
    for (size_t i = 0; i < arr.size(); ++i) v[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
    return v;
  };
  NormStats s;
  s.proprio_mean = vec(j.at("proprio_mean"));
  s.proprio_std = vec(j.at("proprio_std"));
  s.action_mean = vec(j.at("action_mean"));
  s.action_std = vec(j.at("action_std"));
  return s;
}

std::string resolve_manifest_path(const std::string& dir_or_manifest) {
  fs::path p(dir_or_manifest);
  if (fs::is_directory(p)) p /= "manifest.json";
  return p.string();
}

}  // namespace

NormStats compute_stats(const std::vector<SensorimotorTrajectory>& trajectories) {
  if (trajectories.empty()) throw std::invalid_argument("empty dataset");
  const int dof = trajectories.front().dof();
  Eigen::VectorXd psum = Eigen::VectorXd::Zero(dof), psq = Eigen::VectorXd::Zero(dof);
  Eigen::VectorXd asum = Eigen::VectorXd::Zero(dof), asq = Eigen::VectorXd::Zero(dof);
  uint64_t n = 0;
  for (const auto& t : trajectories)
    for (const auto& s : t.steps) {
      psum += s.obs.proprio;
      psq += s.obs.proprio.cwiseAbs2();
      asum += s.action;
      asq += s.action.cwiseAbs2();
      ++n;
    }
  NormStats st;
  st.proprio_mean = psum / double(n);
  st.action_mean = asum / double(n);
  st.proprio_std =
      (psq / double(n) - st.proprio_mean.cwiseAbs2()).cwiseMax(0.0).cwiseSqrt().cwiseMax(1e-8);
  st.action_std =
      (asq / double(n) - st.action_mean.cwiseAbs2()).cwiseMax(0.0).cwiseSqrt().cwiseMax(1e-8);
  return st;
}

DatasetManifest write_dataset(const std::vector<SensorimotorTrajectory>& trajectories,
                              const std::string& dir, const Eigen::VectorXd& limit_lo,
                              const Eigen::VectorXd& limit_hi,
                              uint64_t max_chunk_bytes) {
  if (trajectories.empty()) throw std::invalid_argument("empty dataset");
  const int dof = trajectories.front().dof();
  const int n_pts = trajectories.front().n_points();
  for (size_t i = 0; i < trajectories.size(); ++i) {
    const auto& t = trajectories[i];
    if (t.steps.empty())
      throw std::invalid_argument("trajectory " + std::to_string(i) + " is empty");
    if (t.dof() != dof || t.n_points() != n_pts)
      throw std::invalid_argument("trajectory " + std::to_string(i) +
                                  " disagrees on dof or point count");
    if (limit_lo.size() == dof)
      for (const auto& s : t.steps)
        if (((s.action - limit_lo).array() < -1e-9).any() ||
            ((limit_hi - s.action).array() < -1e-9).any())
          throw std::invalid_argument("trajectory " + std::to_string(i) +
                                      " has actions outside chain limits");
  }

  fs::create_directories(fs::path(dir) / "chunks");

  DatasetManifest manifest;
  manifest.version = kVersion;
  manifest.dof = dof;
  manifest.n_points = n_pts;
  manifest.stats = compute_stats(trajectories);

  std::ofstream chunk;
  std::string chunk_name;
  uint64_t chunk_pos = 0;
  int chunk_id = -1;
  auto open_chunk = [&] {
    ++chunk_id;
    char name[64];
    std::snprintf(name, sizeof(name), "chunks/chunk_%04d.hopd", chunk_id);
    chunk_name = name;
    chunk.open(fs::path(dir) / chunk_name, std::ios::binary | std::ios::trunc);
    if (!chunk) throw std::runtime_error("cannot write chunk file in " + dir);
    chunk.write(kMagic, 4);
    std::string ver;
    put_u32(ver, kVersion);
    chunk.write(ver.data(), 4);
    chunk_pos = 8;
  };
  open_chunk();

  for (const auto& t : trajectories) {
    const std::string rec = encode_record(t);
    if (chunk_pos > 8 && chunk_pos + rec.size() > max_chunk_bytes) {
      chunk.close();
      open_chunk();
    }
    manifest.index.push_back({chunk_name, chunk_pos, rec.size()});
    chunk.write(rec.data(), static_cast<std::streamsize>(rec.size()));
    chunk_pos += rec.size();
  }
  chunk.close();

  save_manifest(manifest, (fs::path(dir) / "manifest.json").string());
  return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
  json doc;
  doc["format"] = "hopd";
  doc["version"] = manifest.version;
  doc["dof"] = manifest.dof;
  doc["n_points"] = manifest.n_points;
  doc["count"] = manifest.index.size();
  doc["index"] = json::array();
  for (const auto& e : manifest.index)
    doc["index"].push_back({{"file", e.file}, {"offset", e.offset}, {"length", e.length}});
  doc["stats"] = stats_to_json(manifest.stats);
  doc["rng_provenance"] = manifest.rng_provenance;
  doc["config_hash"] = manifest.config_hash;
  doc["seed"] = manifest.seed;
  doc["inputs"] = manifest.inputs;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest: " + path);
  out << doc.dump(2);
}

DatasetManifest load_manifest(const std::string& dir_or_manifest) {
  const std::string path = resolve_manifest_path(dir_or_manifest);
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw std::runtime_error("manifest is not valid JSON: " + std::string(e.what()));
  }
  DatasetManifest m;
  m.version = doc.at("version").get<uint32_t>();
  if (m.version != kVersion)
    throw std::runtime_error("manifest version mismatch: have " +
                             std::to_string(m.version) + ", expected " +
                             std::to_string(kVersion));
  m.dof = doc.at("dof").get<int>();
  m.n_points = doc.at("n_points").get<int>();
  for (const auto& e : doc.at("index"))
    m.index.push_back({e.at("file").get<std::string>(), e.at("offset").get<uint64_t>(),
                       e.at("length").get<uint64_t>()});
  if (doc.at("count").get<size_t>() != m.index.size())
    throw std::runtime_error("manifest count disagrees with its index");
  m.stats = stats_from_json(doc.at("stats"));
  m.rng_provenance = doc.value("rng_provenance", std::string());
  m.config_hash = doc.value("config_hash", std::string());
  m.seed = doc.value("seed", uint64_t(0));
  if (doc.contains("inputs"))
    m.inputs = doc.at("inputs").get<std::vector<std::string>>();
  return m;
}

SensorimotorTrajectory read_trajectory(const std::string& dataset_dir,
                                       const ChunkEntry& entry) {
  const fs::path path = fs::path(dataset_dir) / entry.file;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open chunk: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("bad magic in chunk: " + path.string());
  in.seekg(static_cast<std::streamoff>(entry.offset));
  std::string buf(entry.length, '\0');
  in.read(buf.data(), static_cast<std::streamsize>(entry.length));
  if (!in)
    throw std::runtime_error("truncated chunk while reading " + entry.file + " @" +
                             std::to_string(entry.offset));
  return decode_record(buf.data(), buf.size(),
                       entry.file + " @" + std::to_string(entry.offset));
}

std::vector<SensorimotorTrajectory> read_dataset(const std::string& dir_or_manifest,
                                                 DatasetManifest* manifest_out) {
  const std::string manifest_path = resolve_manifest_path(dir_or_manifest);
  const DatasetManifest manifest = load_manifest(manifest_path);
  const std::string dir = fs::path(manifest_path).parent_path().string();

  std::vector<SensorimotorTrajectory> out;
  out.reserve(manifest.count());
  for (size_t i = 0; i < manifest.index.size(); ++i) {
    auto t = read_trajectory(dir, manifest.index[i]);
    if (t.dof() != manifest.dof || t.n_points() != manifest.n_points)
      throw std::runtime_error("trajectory " + std::to_string(i) +
                               " disagrees with manifest dof/n_points");
    out.push_back(std::move(t));
  }
  if (manifest_out) *manifest_out = manifest;
  return out;
}

std::pair<DatasetManifest, DatasetManifest> split(const DatasetManifest& manifest,
                                                  double train_fraction,
                                                  double val_fraction, uint64_t seed) {
  if (std::abs(train_fraction + val_fraction - 1.0) > 1e-9)
    throw std::invalid_argument("split fractions must sum to 1");
  if (train_fraction < 0 || val_fraction < 0)
    throw std::invalid_argument("split fractions must be nonnegative");

  std::vector<size_t> order(manifest.count());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  for (size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.uniform_int(i)]);

  const auto n_train = static_cast<size_t>(std::round(train_fraction * order.size()));
  DatasetManifest train = manifest, val = manifest;
  train.index.clear();
  val.index.clear();
  for (size_t i = 0; i < order.size(); ++i)
    (i < n_train ? train : val).index.push_back(manifest.index[order[i]]);
  return {train, val};
}

DatasetReport dataset_stats(const std::string& dir_or_manifest,
                            const std::string& runs_csv) {
  DatasetManifest manifest;
  const auto trajectories = read_dataset(dir_or_manifest, &manifest);

  DatasetReport rep;
  rep.count = trajectories.size();
  rep.min_length = std::numeric_limits<int>::max();
  rep.action_min = Eigen::VectorXd::Constant(manifest.dof,
                                             std::numeric_limits<double>::infinity());
  rep.action_max = -rep.action_min;
  double total = 0;
  for (const auto& t : trajectories) {
    const int len = t.length();
    total += len;
    rep.min_length = std::min(rep.min_length, len);
    rep.max_length = std::max(rep.max_length, len);
    rep.length_histogram[(len / 10) * 10]++;
    for (const auto& s : t.steps) {
      rep.action_min = rep.action_min.cwiseMin(s.action);
      rep.action_max = rep.action_max.cwiseMax(s.action);
    }
  }
  rep.mean_length = total / double(trajectories.size());

  if (!runs_csv.empty()) {
    std::ifstream in(runs_csv);
    if (!in) throw std::runtime_error("cannot open run log: " + runs_csv);
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      const auto last_comma = line.find_last_of(',');
      if (last_comma != std::string::npos)
        rep.reasons[line.substr(last_comma + 1)]++;
    }
  }
  return rep;
}

std::string report_to_text(const DatasetReport& rep) {
  std::ostringstream ss;
  ss << "trajectories: " << rep.count << "\n"
     << "length: mean " << rep.mean_length << ", min " << rep.min_length << ", max "
     << rep.max_length << "\n";
  ss << "length histogram (bucket: count):";
  for (const auto& [bucket, count] : rep.length_histogram)
    ss << " " << bucket << ":" << count;
  ss << "\naction range per joint:\n";
  for (int i = 0; i < rep.action_min.size(); ++i)
    ss << "  j" << i << ": [" << rep.action_min[i] << ", " << rep.action_max[i] << "]\n";
  if (!rep.reasons.empty()) {
    ss << "run outcomes:";
    for (const auto& [reason, count] : rep.reasons) ss << " " << reason << "=" << count;
    ss << "\n";
  }
  return ss.str();
}

std::string report_to_csv(const DatasetReport& rep) {
  std::ostringstream ss;
  ss << "metric,value\n";
  ss << "count," << rep.count << "\n";
  ss << "mean_length," << rep.mean_length << "\n";
  ss << "min_length," << rep.min_length << "\n";
  ss << "max_length," << rep.max_length << "\n";
  for (const auto& [reason, count] : rep.reasons)
    ss << "reason_" << reason << "," << count << "\n";
  return ss.str();
}

}  // namespace hop
