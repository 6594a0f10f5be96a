#include "osssl/prototypes.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "osssl/errors.hpp"
#include "osssl/kernels.hpp"

namespace osssl {

void ClusterConfig::validate() const {
  if (prototypes_per_class < 1) throw ConfigError("prototypes_per_class must be >= 1");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (!(confidence_threshold > 0.0 && confidence_threshold <= 1.0)) throw ConfigError("confidence_threshold must lie in (0, 1]");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  if (std::abs(alpha + beta - 1.0) > 1e-12) throw ConfigError("alpha + beta must equal 1");
  if (!(weight >= 0.0)) throw ConfigError("clustering weight must be >= 0");
  if (warmup_samples < prototypes_per_class) throw ConfigError("warmup_samples must be >= prototypes_per_class");
}

PrototypeBank::PrototypeBank(std::size_t classes, std::size_t per_class, std::size_t dim)
    : classes_(classes), per_class_(per_class), dim_(dim), protos_(classes * per_class, Vector(dim, 0.0)),
      is_id_(classes * per_class, 0) {}

std::span<const Vector> PrototypeBank::class_prototypes(std::size_t s) const {
  if (s >= classes_) throw DimensionMismatch("class " + std::to_string(s) + " out of range");
  return {protos_.data() + s * per_class_, per_class_};
}

void PrototypeBank::set_prototype(std::size_t s, std::size_t j, Vector p) {
  if (p.size() != dim_) throw DimensionMismatch("prototype dimension");
  protos_.at(s * per_class_ + j) = std::move(p);
}

void PrototypeBank::set_id_flags(std::size_t s, const std::vector<bool>& flags) {
  if (flags.size() != per_class_) throw DimensionMismatch("flag count");
  for (std::size_t j = 0; j < per_class_; ++j) is_id_.at(s * per_class_ + j) = flags[j] ? 1 : 0;
}

// --- k-means -----------------------------------------------------------------

namespace {

std::vector<Vector> seed_plus_plus(std::span<const Vector> points, std::size_t k, Rng& rng) {
  std::vector<Vector> centers;
  centers.push_back(points[rng.uniform_index(points.size())]);
  std::vector<double> best(points.size(), std::numeric_limits<double>::infinity());
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      best[i] = std::min(best[i], squared_distance(points[i], centers.back()));
      total += best[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      const double r = rng.uniform() * total;
      double acc = 0.0;
      pick = points.size() - 1;
      for (std::size_t i = 0; i < points.size(); ++i) {
        acc += best[i];
        if (r < acc && best[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.uniform_index(points.size());
    }
    centers.push_back(points[pick]);
  }
  return centers;
}

}  // namespace

KMeansResult kmeans(std::span<const Vector> points, std::size_t k, std::size_t iters, Rng& rng) {
  if (k == 0 || points.size() < k) {
    throw TooFewPoints(std::to_string(points.size()) + " points for " + std::to_string(k) + " clusters");
  }
  const std::size_t dim = points.front().size();
  KMeansResult res;
  res.centers = seed_plus_plus(points, k, rng);
  res.labels.assign(points.size(), 0);
  std::vector<std::size_t> labels(points.size());
  std::vector<double> dists(points.size());

  for (std::size_t it = 0; it < std::max<std::size_t>(iters, 1); ++it) {
    kernels::assign_nearest(points, res.centers, labels, dists);
    double inertia = 0.0;
    for (double d : dists) inertia += d;
    res.inertia.push_back(inertia);
    const bool unchanged = it > 0 && labels == res.labels;
    res.labels = labels;
    if (unchanged) break;

    std::vector<Vector> sums(k, Vector(dim, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
      auto& s = sums[labels[i]];
      for (std::size_t c = 0; c < dim; ++c) s[c] += points[i][c];
      ++counts[labels[i]];
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] == 0) continue;
      for (double& v : sums[j]) v /= static_cast<double>(counts[j]);
      res.centers[j] = std::move(sums[j]);
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] != 0) continue;
      // Re-seed with the point farthest from its center, taken from a cluster
      // that can spare it.
      std::size_t far = points.size();
      double far_d = -1.0;
      for (std::size_t i = 0; i < points.size(); ++i) {
        if (counts[labels[i]] > 1 && dists[i] > far_d) {
          far_d = dists[i];
          far = i;
        }
      }
      if (far == points.size()) break;
      --counts[labels[far]];
      labels[far] = j;
      counts[j] = 1;
      dists[far] = 0.0;
      res.centers[j] = points[far];
    }
  }
  return res;
}

void init_prototypes(PrototypeBank& bank, const std::vector<std::vector<Vector>>& per_class_features,
                     const ClusterConfig& cfg, Rng& rng) {
  if (bank.initialized()) throw BankAlreadyInitialized("prototypes are initialized once");
  if (per_class_features.size() != bank.classes()) throw DimensionMismatch("feature groups != class count");
  const std::size_t need = std::max(cfg.warmup_samples, bank.per_class());
  for (std::size_t s = 0; s < bank.classes(); ++s) {
    if (per_class_features[s].size() < need) {
      throw NotEnoughWarmupSamples("class " + std::to_string(s) + " has " + std::to_string(per_class_features[s].size()) +
                                   " of " + std::to_string(need));
    }
  }
  for (std::size_t s = 0; s < bank.classes(); ++s) {
    const auto km = kmeans(per_class_features[s], bank.per_class(), cfg.kmeans_iters, rng);
    for (std::size_t j = 0; j < bank.per_class(); ++j) bank.set_prototype(s, j, l2_normalize(km.centers[j]));
  }
  bank.mark_initialized();
}

// --- clustering losses ---------------------------------------------------------

std::size_t nearest_prototype(const PrototypeBank& bank, std::size_t s, std::span<const double> f) {
  const auto protos = bank.class_prototypes(s);
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < protos.size(); ++j) {
    const double d = squared_distance(f, protos[j]);
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  return best;
}

double contrast_nll(std::span<const double> logits, std::size_t target) {
  return log_sum_exp(logits) - logits[target];
}

ClusterTerm prototype_contrast(const PrototypeBank& bank, std::size_t s, std::span<const double> f,
                               std::size_t target, double temperature) {
  const auto protos = bank.class_prototypes(s);
  Vector logits(protos.size());
  for (std::size_t j = 0; j < protos.size(); ++j) logits[j] = dot(f, protos[j]) / temperature;
  const Vector w = softmax(logits, 1.0);

  ClusterTerm t;
  t.loss = contrast_nll(logits, target);
  t.target = target;
  t.grad.assign(f.size(), 0.0);
  for (std::size_t j = 0; j < protos.size(); ++j) {
    const double c = (w[j] - (j == target ? 1.0 : 0.0)) / temperature;
    for (std::size_t d = 0; d < f.size(); ++d) t.grad[d] += c * protos[j][d];
  }
  return t;
}

namespace {

double max_prob(const ForwardResult& r) { return *std::max_element(r.probs.begin(), r.probs.end()); }

void require_initialized(const PrototypeBank& bank) {
  if (!bank.initialized()) throw BankNotInitialized("prototypes have not been initialized");
}

}  // namespace

ClusterTerm clustering_loss_unlabeled(const PrototypeBank& bank, const ForwardResult& view, std::size_t pseudo_label,
                                      const ClusterConfig& cfg) {
  require_initialized(bank);
  if (!(max_prob(view) > cfg.confidence_threshold)) return {0.0, Vector(view.feature.size(), 0.0), std::nullopt};
  const std::size_t j = nearest_prototype(bank, pseudo_label, view.feature);
  return prototype_contrast(bank, pseudo_label, view.feature, j, cfg.temperature);
}

ClusterTerm clustering_loss_labeled(const PrototypeBank& bank, const ForwardResult& view, std::size_t label,
                                    std::span<const double> class_center, const ClusterConfig& cfg) {
  ClusterTerm t = clustering_loss_unlabeled(bank, view, label, cfg);
  t.loss -= dot(view.feature, class_center);
  for (std::size_t d = 0; d < t.grad.size(); ++d) t.grad[d] -= class_center[d];
  return t;
}

ConsistencyTerm clustering_loss_cr(const PrototypeBank& bank, const ForwardResult& weak, std::size_t pseudo_label,
                                   std::span<const double> strong_feature, const ClusterConfig& cfg) {
  require_initialized(bank);
  ConsistencyTerm t;
  if (!(max_prob(weak) > cfg.confidence_threshold)) {
    t.grad_weak.assign(weak.feature.size(), 0.0);
    t.grad_strong.assign(strong_feature.size(), 0.0);
    return t;
  }
  const std::size_t j = nearest_prototype(bank, pseudo_label, weak.feature);
  auto a = prototype_contrast(bank, pseudo_label, weak.feature, j, cfg.temperature);
  auto b = prototype_contrast(bank, pseudo_label, strong_feature, j, cfg.temperature);
  t.loss = a.loss + b.loss;
  t.grad_weak = std::move(a.grad);
  t.grad_strong = std::move(b.grad);
  t.target = j;
  return t;
}

ClusterStepTerms add_cluster_terms(StepGraph& graph, std::span<const UnlabeledRecord> records,
                                   std::span<const std::size_t> labels, const PrototypeBank& bank,
                                   const std::vector<Vector>& class_centers, const ClusterConfig& cfg,
                                   bool consistency) {
  using View = StepGraph::View;
  ClusterStepTerms out;
  out.targets.resize(records.size());
  const double wc = cfg.weight;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    if (consistency) {
      const auto ct = clustering_loss_cr(bank, rec.weak, rec.pseudo_label, rec.strong.feature, cfg);
      if (!ct.target) continue;
      graph.add_feature_grad(View::weak, i, ct.grad_weak, wc);
      graph.add_feature_grad(View::strong, i, ct.grad_strong, wc);
      out.unlabeled += ct.loss;
      out.targets[i] = ct.target;
    } else {
      const auto ct = clustering_loss_unlabeled(bank, rec.weak, rec.pseudo_label, cfg);
      if (!ct.target) continue;
      graph.add_feature_grad(View::weak, i, ct.grad, wc);
      out.unlabeled += ct.loss;
      out.targets[i] = ct.target;
    }
    ++out.gate_open;
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto ct = clustering_loss_labeled(bank, graph.result(View::labeled, i), labels[i],
                                            class_centers.at(labels[i]), cfg);
    graph.add_feature_grad(View::labeled, i, ct.grad, wc);
    out.labeled += ct.loss;
  }
  return out;
}

void update_prototype(PrototypeBank& bank, std::size_t s, std::size_t j, std::span<const double> f,
                      const ClusterConfig& cfg) {
  require_initialized(bank);
  const Vector& p = bank.prototype(s, j);
  if (f.size() != p.size()) throw DimensionMismatch("feature/prototype dimension");
  Vector mixed(p.size());
  for (std::size_t d = 0; d < p.size(); ++d) mixed[d] = cfg.alpha * p[d] + cfg.beta * f[d];
  bank.set_prototype(s, j, l2_normalize(mixed));
}

std::vector<Vector> labeled_class_centers(const std::vector<std::vector<Vector>>& features_by_class) {
  std::vector<Vector> centers;
  centers.reserve(features_by_class.size());
  for (std::size_t s = 0; s < features_by_class.size(); ++s) {
    const auto& feats = features_by_class[s];
    if (feats.empty()) throw EmptyClass("class " + std::to_string(s) + " has no labeled feature");
    Vector sum(feats.front().size(), 0.0);
    for (const auto& f : feats)
      for (std::size_t d = 0; d < sum.size(); ++d) sum[d] += f[d];
    centers.push_back(l2_normalize(sum));
  }
  return centers;
}

}  // namespace osssl
