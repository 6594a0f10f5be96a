#include "osssl/identify.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "osssl/errors.hpp"

namespace osssl {

std::vector<Vector> labeled_feature_means(const std::vector<std::vector<Vector>>& features_by_class) {
  std::vector<Vector> means;
  means.reserve(features_by_class.size());
  for (std::size_t s = 0; s < features_by_class.size(); ++s) {
    const auto& feats = features_by_class[s];
    if (feats.empty()) throw EmptyClass("class " + std::to_string(s) + " has no labeled feature");
    Vector m(feats.front().size(), 0.0);
    for (const auto& f : feats)
      for (std::size_t d = 0; d < m.size(); ++d) m[d] += f[d];
    for (double& v : m) v /= static_cast<double>(feats.size());
    means.push_back(std::move(m));
  }
  return means;
}

void flag_id_prototypes(PrototypeBank& bank, const std::vector<Vector>& centers, std::size_t n_id) {
  if (n_id < 1 || n_id > bank.per_class()) {
    throw InvalidNid("n_id = " + std::to_string(n_id) + " with " + std::to_string(bank.per_class()) + " prototypes per class");
  }
  if (!bank.initialized()) throw BankNotInitialized("cannot flag uninitialized prototypes");
  if (centers.size() != bank.classes()) throw DimensionMismatch("one labeled center per class expected");
  for (std::size_t s = 0; s < bank.classes(); ++s) {
    const auto protos = bank.class_prototypes(s);
    std::vector<double> dist(protos.size());
    for (std::size_t j = 0; j < protos.size(); ++j) dist[j] = squared_distance(protos[j], centers[s]);
    std::vector<std::size_t> order(protos.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
    std::vector<bool> flags(protos.size(), false);
    for (std::size_t r = 0; r < n_id; ++r) flags[order[r]] = true;
    bank.set_id_flags(s, flags);
  }
  bank.mark_flagged();
}

IdentificationResult identify_sample(const PrototypeBank& bank, std::uint64_t uid, const ForwardResult& weak,
                                     std::size_t pseudo_label, const ClusterConfig& cfg) {
  if (!bank.flagged()) throw BankNotFlagged("identification needs flagged prototypes");
  IdentificationResult r;
  r.uid = uid;
  r.pseudo_class = pseudo_label;
  const double conf = *std::max_element(weak.probs.begin(), weak.probs.end());
  if (!(conf > cfg.confidence_threshold)) return r;
  const std::size_t j = nearest_prototype(bank, pseudo_label, weak.feature);
  r.nearest_prototype = j;
  r.verdict = bank.is_id(pseudo_label, j) ? Verdict::id : Verdict::ood;
  return r;
}

}  // namespace osssl
