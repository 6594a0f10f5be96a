#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "osssl/config.hpp"
#include "osssl/trainer.hpp"

namespace osssl {

struct AblationRow {
  std::string name;
  TrainConfig config;
};

/// baseline, clustering_weak_only, clustering, refinement_random,
/// refinement_importance, refinement_cascading, clean, labeled_only.
std::vector<AblationRow> ablation_rows(const TrainConfig& base);

/// The base config for repetition i: seed + i, and dataset seed + i for generated data.
TrainConfig with_seed_offset(const TrainConfig& cfg, std::uint64_t offset);

/// Condensed result of one training run.
struct RunSummary {
  double final_accuracy = 0.0;
  std::optional<double> auroc_baseline;    // last epoch
  std::optional<double> auroc_prototype;   // last epoch
  std::optional<double> id_density_level1;  // mean over epochs after `density_after`
  std::optional<double> id_density_level2;
  double raw_id_ratio = 0.0;
  std::size_t gate_open_pseudo = 0;  // summed over all epochs
};

RunSummary summarize(const std::vector<EpochMetrics>& epochs, std::size_t density_after);

struct AblationRun {
  std::string row;
  std::size_t repetition = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  RunSummary summary;
};

struct AblationOptions {
  std::size_t seeds = 5;
  std::filesystem::path out_dir;  // empty: no files
  std::vector<std::string> only_rows;  // empty: all rows
  const std::atomic<bool>* stop_flag = nullptr;
};

/// Runs every row for every repetition; a failing run is recorded and the rest continue.
std::vector<AblationRun> ablate(const TrainConfig& base, const AblationOptions& opts);

/// One line per run plus one mean line per row.
std::string ablation_csv(const std::vector<AblationRun>& runs);
std::string ablation_table(const std::vector<AblationRun>& runs);

}  // namespace osssl
