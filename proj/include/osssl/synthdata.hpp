#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "osssl/numerics.hpp"

namespace osssl {

enum class Domain { id, ood };

/// One row of an open-set benchmark. `true_class` and `domain` are ground truth:
/// training code reads only `uid`, `x`, and (for labeled rows) the label.
struct Example {
  std::uint64_t uid = 0;
  Vector x;
  std::optional<std::size_t> true_class;  // 0-based; empty for OOD
  Domain domain = Domain::id;

  bool operator==(const Example&) const = default;
};

struct OpenSetDataset {
  std::size_t num_classes = 0;
  std::vector<Example> labeled;
  std::vector<Example> unlabeled;
  std::vector<Example> test;

  std::size_t input_dim() const;
  /// Throws InvariantViolation when the open-set invariants do not hold.
  void validate() const;

  bool operator==(const OpenSetDataset&) const = default;
};

struct DatasetSpec {
  std::size_t num_classes = 6;
  std::size_t ood_clusters = 6;
  std::size_t input_dim = 16;
  std::size_t labeled_per_class = 25;
  std::size_t unlabeled_per_class = 500;
  std::size_t ood_count = 3000;
  std::size_t test_per_class = 200;
  double separation = 3.0;
  double stddev = 1.0;
  std::uint64_t seed = 0;

  /// Throws InfeasibleSpec.
  void validate() const;
};

/// Gaussian-mixture open-set benchmark. Each ID class s is N(mu_s, stddev^2 I)
/// with pairwise center distance >= separation; OOD cluster centers sit at
/// least separation/2 from every ID center. Per-class draws use their own
/// substreams, so the result is independent of generation order.
OpenSetDataset generate_open_set(const DatasetSpec& spec);

/// The mixture centers generate_open_set draws for `spec`.
std::vector<Vector> generated_id_centers(const DatasetSpec& spec);
std::vector<Vector> generated_ood_centers(const DatasetSpec& spec);

/// Noise levels in absolute units (the config scales them by the class stddev).
struct AugmentConfig {
  double weak_sigma = 0.05;
  double strong_sigma = 0.25;
  double drop_prob = 0.1;
};

enum class Strength { weak, strong };

/// weak: x + N(0, weak_sigma^2); strong: x + N(0, strong_sigma^2), then each
/// coordinate zeroed with probability drop_prob.
Vector augment(std::span<const double> x, Strength strength, const AugmentConfig& cfg, Rng& rng);

/// CSV schema: uid,split,domain,label,f0,...,f{d-1}. Throws ParseError (with line
/// number), SchemaError (missing columns) or InvariantViolation.
OpenSetDataset load_csv(const std::filesystem::path& path);
void save_csv(const OpenSetDataset& data, const std::filesystem::path& path);

/// Ground-truth domain lookup for metrics.
class DomainIndex {
 public:
  explicit DomainIndex(const OpenSetDataset& data);
  Domain domain(std::uint64_t uid) const;
  double id_ratio() const { return id_ratio_; }

 private:
  std::vector<std::pair<std::uint64_t, Domain>> sorted_;
  double id_ratio_ = 0.0;
};

}  // namespace osssl
