#pragma once

#include <map>
#include <string>
#include <vector>

#include "hop/trajectory.hpp"

namespace hop {

/// Per-dimension z-scoring statistics for proprioception and actions.
struct NormStats {
  Eigen::VectorXd proprio_mean, proprio_std;
  Eigen::VectorXd action_mean, action_std;
};

struct ChunkEntry {
  std::string file;   // relative to the dataset directory
  uint64_t offset = 0;
  uint64_t length = 0;
};

/// Sidecar description of a dataset directory; a reader needs only this file
/// plus the chunks it names.
struct DatasetManifest {
  uint32_t version = 1;
  int dof = 0;
  int n_points = 0;
  std::vector<ChunkEntry> index;  // one entry per trajectory
  NormStats stats;
  std::string rng_provenance;
  // Pipeline provenance.
  std::string config_hash;
  uint64_t seed = 0;
  std::vector<std::string> inputs;

  size_t count() const { return index.size(); }
};

/// Writes trajectories as binary chunk files plus manifest.json under `dir`.
/// When `limit_lo/limit_hi` are non-empty every action is checked against
/// them. Overwrites any existing dataset in `dir`.
DatasetManifest write_dataset(const std::vector<SensorimotorTrajectory>& trajectories,
                              const std::string& dir,
                              const Eigen::VectorXd& limit_lo = {},
                              const Eigen::VectorXd& limit_hi = {},
                              uint64_t max_chunk_bytes = 64ull << 20);

DatasetManifest load_manifest(const std::string& dir_or_manifest);
void save_manifest(const DatasetManifest& manifest, const std::string& path);

/// Reads every trajectory listed in the manifest. Verifies per-record
/// checksums and shapes; errors name the offending trajectory.
std::vector<SensorimotorTrajectory> read_dataset(const std::string& dir_or_manifest,
                                                 DatasetManifest* manifest_out = nullptr);

SensorimotorTrajectory read_trajectory(const std::string& dataset_dir,
                                       const ChunkEntry& entry);

/// Seed-deterministic disjoint partition. Fractions must sum to 1.
std::pair<DatasetManifest, DatasetManifest> split(const DatasetManifest& manifest,
                                                  double train_fraction,
                                                  double val_fraction, uint64_t seed);

/// Recompute normalization stats from the trajectories (two-pass).
NormStats compute_stats(const std::vector<SensorimotorTrajectory>& trajectories);

struct DatasetReport {
  size_t count = 0;
  double mean_length = 0.0;
  int min_length = 0, max_length = 0;
  std::map<int, int> length_histogram;  // bucketed by 10 steps
  Eigen::VectorXd action_min, action_max;
  std::map<std::string, int> reasons;   // from the run log, when present
};

/// Deterministic dataset summary; `runs_csv` (the retargeting run log) is
/// optional and feeds the acceptance-reason tally.
DatasetReport dataset_stats(const std::string& dir_or_manifest,
                            const std::string& runs_csv = {});

std::string report_to_text(const DatasetReport& report);
std::string report_to_csv(const DatasetReport& report);

}  // namespace hop
