#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "osssl/config.hpp"
#include "osssl/metrics.hpp"
#include "osssl/model.hpp"
#include "osssl/pools.hpp"
#include "osssl/prototypes.hpp"
#include "osssl/synthdata.hpp"

namespace osssl {

/// One line of metrics.jsonl. Optional fields are written as null when undefined.
struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double test_acc = 0.0;
  std::optional<double> auroc_baseline;
  std::optional<double> auroc_prototype;
  std::optional<double> id_density_level1;
  std::optional<double> id_density_level2;
  double raw_id_ratio = 0.0;
  // Per-iteration means over the epoch.
  double loss_supervised = 0.0;
  double loss_unlabeled = 0.0;
  double loss_cluster = 0.0;
  double loss_total = 0.0;
  // Totals over the epoch.
  std::size_t gate_open_pseudo = 0;
  std::size_t gate_open_cluster = 0;
  std::size_t identified_id = 0;
  std::size_t identified_ood = 0;
  bool prototypes_ready = false;
};

nlohmann::json to_json(const EpochMetrics& m);

/// Metrics that depend only on a frozen model state.
struct EvalMetrics {
  double test_acc = 0.0;
  std::optional<double> auroc_baseline;
  std::optional<double> auroc_prototype;
  std::optional<double> id_density_level1;
  std::optional<double> id_density_level2;
};

nlohmann::json to_json(const EvalMetrics& m);

/// Accuracy on the test split; both AUROCs over the whole unlabeled split
/// scored on raw inputs (null when undefined); ID density of pool levels 1 and 2.
EvalMetrics evaluate_state(const ModelParams& params, const PrototypeBank& bank, const PoolPyramid& pyramid,
                           const OpenSetDataset& data);

/// Running sums for the epoch in progress.
struct EpochAccumulator {
  std::size_t iterations = 0;
  double supervised = 0.0;
  double unlabeled = 0.0;
  double cluster = 0.0;
  double total = 0.0;
  std::size_t gate_open_pseudo = 0;
  std::size_t gate_open_cluster = 0;
  std::size_t identified_id = 0;
  std::size_t identified_ood = 0;
};

/// Everything needed to continue a run exactly where it stopped.
struct TrainerState {
  TrainConfig config;
  ModelParams params;
  PrototypeBank bank;
  PoolPyramid pyramid;
  std::vector<std::set<std::uint64_t>> warmup;  // distinct confident uids per pseudo class
  std::vector<Vector> class_centers;            // q_y
  std::vector<Vector> label_means;              // O_s
  std::map<std::string, Rng> rngs;
  std::size_t epoch = 0;            // completed epochs
  std::size_t iteration = 0;        // completed iterations within the current epoch
  std::size_t global_iteration = 0;
  std::optional<std::size_t> prototype_init_epoch;
  EpochAccumulator accum;
  std::vector<double> accuracy_history;
  std::size_t metrics_lines = 0;
  std::size_t event_lines = 0;
};

struct RunOptions {
  std::filesystem::path out_dir;  // empty: keep everything in memory
  bool event_log = false;         // events.jsonl; also enabled by OSSSL_LOG=debug
  bool resume = false;            // continue from out_dir/checkpoint.json
  /// Stop (with a checkpoint) once this many iterations have run in total.
  std::optional<std::size_t> stop_after_iterations;
  const std::atomic<bool>* stop_flag = nullptr;
  /// Use this dataset instead of materializing the configured one.
  const OpenSetDataset* data = nullptr;
};

struct RunResult {
  bool interrupted = false;
  std::vector<EpochMetrics> epochs;  // epochs completed in this invocation
  std::vector<double> accuracy_history;
  double final_accuracy = 0.0;       // mean test accuracy of the last 10 epochs
  std::optional<std::size_t> prototype_init_epoch;
  TrainerState state;
};

/// Runs (or resumes) training. With an out_dir, writes config.json,
/// metrics.jsonl, checkpoint.json, summary.json and optionally events.jsonl.
RunResult train(const TrainConfig& cfg, const RunOptions& opts = {});

/// Mean of the last min(10, n) values.
double final_accuracy(const std::vector<double>& history);

/// True when OSSSL_LOG=debug.
bool debug_logging_enabled();

}  // namespace osssl
