#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"

#include "osssl/model.hpp"
#include "osssl/pools.hpp"
#include "osssl/prototypes.hpp"
#include "osssl/synthdata.hpp"

namespace osssl {

enum class ClusteringMode { off, weak_only, on };
enum class RefinementMode { off, random, importance, cascading };
/// Which unlabeled examples training may see: everything, ID only ("clean"
/// reference), or nothing ("labeled only" reference).
enum class UnlabeledUse { all, id_only, none };

/// Augmentation noise in units of the within-class stddev.
struct AugmentScale {
  double weak_sigma = 0.05;
  double strong_sigma = 0.25;
  double drop_prob = 0.1;
};

struct TrainConfig {
  // Exactly one of these is set.
  std::optional<DatasetSpec> dataset;
  std::optional<std::string> dataset_csv;

  std::size_t hidden_dim = 32;
  std::size_t feature_dim = 8;

  std::size_t epochs = 60;
  std::size_t labeled_batch = 32;
  std::size_t unlabeled_batch = 96;
  double lr = 0.05;
  std::size_t lr_warmup_epochs = 0;
  double weight_decay = 5e-4;
  double lambda_u = 1.0;
  double pseudo_threshold = 0.95;

  AugmentScale augment;
  /// Stddev that AugmentScale is relative to; defaults to the generated
  /// dataset's stddev, or 1 for CSV data.
  std::optional<double> augment_unit;

  ClusteringMode clustering = ClusteringMode::on;
  ClusterConfig cluster;
  std::size_t id_prototypes = 1;  // N_id

  RefinementMode refinement = RefinementMode::cascading;
  std::size_t pool_levels = 2;
  std::size_t pool_capacity = 120;  // N_p

  UnlabeledUse unlabeled = UnlabeledUse::all;
  std::uint64_t seed = 0;

  /// Throws ConfigError.
  void validate() const;

  AugmentConfig augment_config() const;
  SslConfig ssl_config() const { return {lambda_u, pseudo_threshold}; }
  /// Pool levels actually built for the refinement mode (0 when off).
  std::size_t effective_pool_levels() const;
  ReplacementRule replacement_rule() const;
};

/// The default desk-scale benchmark configuration.
TrainConfig desk_scale_config();

DatasetSpec dataset_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DatasetSpec& spec);

/// Throws ConfigError on unknown fields, wrong types or invalid values.
TrainConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& cfg);

TrainConfig load_config(const std::filesystem::path& path);
DatasetSpec load_dataset_spec(const std::filesystem::path& path);

/// Generates or loads the configured dataset.
OpenSetDataset materialize_dataset(const TrainConfig& cfg);

const char* to_string(ClusteringMode m);
const char* to_string(RefinementMode m);
const char* to_string(UnlabeledUse u);

}  // namespace osssl
