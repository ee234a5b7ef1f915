#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "abris/abris_driver.hpp"
#include "abris/baselines.hpp"

namespace abris {

/// Flat `key = value` text; `#` starts a comment, keys are dotted names.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text);
KeyValues read_key_values(const std::filesystem::path& file);
std::string format_key_values(const KeyValues& kv);

/// SHA-1 of the text framed as a git blob, hex encoded.
std::string git_blob_hash(const std::string& text);

enum class Method { Abris, BbviPlain, Mh, Smc };
enum class Problem { GaussianMatch, Poisson };

struct ExperimentConfig {
  std::string name = "experiment";
  Method method = Method::Abris;
  Problem problem = Problem::GaussianMatch;
  std::uint64_t seed = 0;
  int replications = 1;
  int parallelism = 1;
  std::string out_dir = "out";

  // gaussian-match: dim = 2^p, N = 2^n
  int p = 2;
  int n = 3;
  double target_variance = 0.1;

  // poisson
  Index n_kkl = 20;
  double length_scale = 0.3;
  bool scale_basis = true;
  std::uint64_t noise_seed = 0;
  long eval_interval = 250;  // model calls between error checkpoints
  Index eval_draws = 10000;
  double target_error = 0.10;

  AbrisConfig abris;
  OptimizerConfig optimizer;
  MhConfig mh;
  SmcConfig smc;

  Index dim() const;
  /// The resolved settings as key-value text input, defaults included.
  KeyValues to_key_values() const;
};

/// Unknown keys, malformed values and out-of-range settings are ConfigErrors.
/// `sweep.*` keys are rejected here; see expand_sweep.
ExperimentConfig parse_config(const KeyValues& kv);

/// Cartesian product of every `sweep.<key> = a, b, ...` list, in key order.
/// Each point is the base text with the swept keys substituted.
std::vector<KeyValues> expand_sweep(const KeyValues& kv);

struct ReplicationSummary {
  int replication = 0;
  std::uint64_t seed = 0;
  std::string status;  // ok, budget, not-converged, diverged, failed
  long iterations = 0;
  long model_calls = 0;
  long counted_calls = 0;  // seen by the counting wrapper
  bool converged = false;
  bool budget_exhausted = false;
  bool diverged = false;
  double final_error = 0.0;
  long calls_to_target = -1;
  std::string records;  // relative to the manifest directory
  std::string curve;
  std::string diagnostic;
};

struct RunManifest {
  std::filesystem::path file;
  KeyValues config;
  std::string config_hash;
  std::string started;
  std::string finished;
  std::string status = "running";
  std::vector<ReplicationSummary> replications;

  std::filesystem::path directory() const { return file.parent_path(); }
};

void write_manifest(const RunManifest& manifest);
RunManifest read_manifest(const std::filesystem::path& file);

/// Runs every replication (seed = base + index) and writes the manifest,
/// records and tables under config.out_dir.
RunManifest run_experiment(const ExperimentConfig& config, std::ostream* log = nullptr);

struct SweepPoint {
  KeyValues overrides;
  RunManifest manifest;
};

std::vector<SweepPoint> run_sweep(const KeyValues& kv, std::ostream* log = nullptr);

/// Writes records_<r>.jsonl, reuse_<r>.tsv and summary.tsv into `out_dir`.
std::vector<std::filesystem::path> export_records(const RunManifest& manifest,
                                                  const std::filesystem::path& out_dir);

/// 0 success, 2 a replication diverged or failed, 3 a budget ran out first.
int manifest_exit_code(const RunManifest& manifest);

void write_table(const std::filesystem::path& file, MatrixRef table);
Matrix read_table(const std::filesystem::path& file);

}  // namespace abris
