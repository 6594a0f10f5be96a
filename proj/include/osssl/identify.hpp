#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "osssl/model.hpp"
#include "osssl/numerics.hpp"
#include "osssl/prototypes.hpp"

namespace osssl {

enum class Verdict { id, ood, ungated };

struct IdentificationResult {
  std::uint64_t uid = 0;
  std::size_t pseudo_class = 0;
  std::optional<std::size_t> nearest_prototype;  // empty when ungated
  Verdict verdict = Verdict::ungated;

  bool operator==(const IdentificationResult&) const = default;
};

/// O_s: arithmetic mean of the labeled features of class s. Not renormalized.
/// Throws EmptyClass.
std::vector<Vector> labeled_feature_means(const std::vector<std::vector<Vector>>& features_by_class);

/// Per class, flags the n_id prototypes nearest O_s as ID (ties to the lower
/// index) and every other prototype as OOD. Throws InvalidNid.
void flag_id_prototypes(PrototypeBank& bank, const std::vector<Vector>& centers, std::size_t n_id);

/// Only the weak view's feature, probs and pseudo label feed the verdict.
IdentificationResult identify_sample(const PrototypeBank& bank, std::uint64_t uid, const ForwardResult& weak,
                                     std::size_t pseudo_label, const ClusterConfig& cfg);

}  // namespace osssl
