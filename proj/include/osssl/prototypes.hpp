#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "osssl/model.hpp"
#include "osssl/numerics.hpp"

namespace osssl {

struct ClusterConfig {
  std::size_t prototypes_per_class = 4;  // K
  double temperature = 0.07;
  double confidence_threshold = 0.98;    // t_c, strict gate
  double alpha = 0.99;                   // momentum on the old prototype
  double beta = 0.01;                    // weight of the new feature
  double weight = 0.01;                  // w_c
  std::size_t warmup_samples = 16;       // M_warm
  std::size_t kmeans_iters = 50;

  /// Throws ConfigError.
  void validate() const;
};

/// S x K unit-norm prototypes with per-prototype ID flags.
class PrototypeBank {
 public:
  PrototypeBank() = default;
  PrototypeBank(std::size_t classes, std::size_t per_class, std::size_t dim);

  std::size_t classes() const noexcept { return classes_; }
  std::size_t per_class() const noexcept { return per_class_; }
  std::size_t dim() const noexcept { return dim_; }
  bool initialized() const noexcept { return initialized_; }
  bool flagged() const noexcept { return flagged_; }

  const Vector& prototype(std::size_t s, std::size_t j) const { return protos_.at(s * per_class_ + j); }
  std::span<const Vector> class_prototypes(std::size_t s) const;
  bool is_id(std::size_t s, std::size_t j) const { return is_id_.at(s * per_class_ + j) != 0; }

  void set_prototype(std::size_t s, std::size_t j, Vector p);
  void set_id_flags(std::size_t s, const std::vector<bool>& flags);
  void mark_initialized() { initialized_ = true; }
  void mark_flagged() { flagged_ = true; }

  bool operator==(const PrototypeBank&) const = default;

 private:
  std::size_t classes_ = 0;
  std::size_t per_class_ = 0;
  std::size_t dim_ = 0;
  std::vector<Vector> protos_;
  std::vector<char> is_id_;
  bool initialized_ = false;
  bool flagged_ = false;
};

struct KMeansResult {
  std::vector<Vector> centers;
  std::vector<std::size_t> labels;
  std::vector<double> inertia;  // after each assignment step
};

/// Lloyd's algorithm with k-means++ seeding. An empty cluster is re-seeded with
/// the point farthest from its assigned center. Throws TooFewPoints.
KMeansResult kmeans(std::span<const Vector> points, std::size_t k, std::size_t iters, Rng& rng);

/// prototypes of class s <- normalize(kmeans(features of s)). Single shot.
void init_prototypes(PrototypeBank& bank, const std::vector<std::vector<Vector>>& per_class_features,
                     const ClusterConfig& cfg, Rng& rng);

/// Nearest prototype of class s by squared Euclidean distance, ties to the lower index.
std::size_t nearest_prototype(const PrototypeBank& bank, std::size_t s, std::span<const double> f);

/// -log softmax(logits)[target].
double contrast_nll(std::span<const double> logits, std::size_t target);

struct ClusterTerm {
  double loss = 0.0;
  Vector grad;                        // d loss / d feature
  std::optional<std::size_t> target;  // nearest prototype j*, empty when gated off
};

/// -log softmax_j(f . p_j / tau)[target] over class s, with its gradient in f.
ClusterTerm prototype_contrast(const PrototypeBank& bank, std::size_t s, std::span<const double> f,
                               std::size_t target, double temperature);

/// Unlabeled clustering loss on one view: zero unless max(probs) > t_c.
ClusterTerm clustering_loss_unlabeled(const PrototypeBank& bank, const ForwardResult& view, std::size_t pseudo_label,
                                      const ClusterConfig& cfg);

/// -f . q_y (never gated) plus the unlabeled form evaluated at the true label.
ClusterTerm clustering_loss_labeled(const PrototypeBank& bank, const ForwardResult& view, std::size_t label,
                                    std::span<const double> class_center, const ClusterConfig& cfg);

struct ConsistencyTerm {
  double loss = 0.0;
  Vector grad_weak;
  Vector grad_strong;
  std::optional<std::size_t> target;
};

/// Both views pulled toward the prototype nearest the weak view; the gate reads the weak view.
ConsistencyTerm clustering_loss_cr(const PrototypeBank& bank, const ForwardResult& weak, std::size_t pseudo_label,
                                   std::span<const double> strong_feature, const ClusterConfig& cfg);

struct ClusterStepTerms {
  double unlabeled = 0.0;  // summed over gate-open unlabeled samples, before w_c
  double labeled = 0.0;    // summed over the labeled batch, before w_c
  std::size_t gate_open = 0;
  std::vector<std::optional<std::size_t>> targets;  // j* per unlabeled sample
};

/// Deposits w_c-weighted clustering gradients for one step into `graph`.
/// consistency: both unlabeled views (weak view picks j* and gates); otherwise
/// the weak view only. Labeled samples use their label and class center.
ClusterStepTerms add_cluster_terms(StepGraph& graph, std::span<const UnlabeledRecord> records,
                                   std::span<const std::size_t> labels, const PrototypeBank& bank,
                                   const std::vector<Vector>& class_centers, const ClusterConfig& cfg,
                                   bool consistency);

/// p_{s,j} <- normalize(alpha * p_{s,j} + beta * f). Touches no other prototype.
void update_prototype(PrototypeBank& bank, std::size_t s, std::size_t j, std::span<const double> f,
                      const ClusterConfig& cfg);

/// q_y = normalize(sum of the class's features). Throws EmptyClass or ZeroVector.
std::vector<Vector> labeled_class_centers(const std::vector<std::vector<Vector>>& features_by_class);

}  // namespace osssl
