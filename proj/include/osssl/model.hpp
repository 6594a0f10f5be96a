#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "osssl/numerics.hpp"
#include "osssl/synthdata.hpp"

namespace osssl {

struct ModelDims {
  std::size_t input = 0;
  std::size_t hidden = 0;
  std::size_t feature = 0;
  std::size_t classes = 0;

  bool operator==(const ModelDims&) const = default;
};

/// Two-layer tanh extractor (w1, b1, w2, b2) followed by a linear head (wc, bc).
/// w1 is input x hidden, w2 is hidden x feature, wc is feature x classes.
struct ParamTensors {
  Matrix w1;
  Vector b1;
  Matrix w2;
  Vector b2;
  Matrix wc;
  Vector bc;

  static ParamTensors zeros(const ModelDims& dims);
  ModelDims dims() const { return {w1.rows(), w1.cols(), w2.cols(), wc.cols()}; }

  /// Visits every tensor as a flat span, always in the order w1, b1, w2, b2, wc, bc.
  void for_each(const std::function<void(std::span<double>)>& fn);
  void for_each(const std::function<void(std::span<const double>)>& fn) const;

  std::size_t parameter_count() const;
  bool all_finite() const;

  bool operator==(const ParamTensors&) const = default;
};

using ModelParams = ParamTensors;
using Gradients = ParamTensors;

/// Glorot-uniform weights, zero biases.
ModelParams init_params(const ModelDims& dims, Rng& rng);

struct ForwardResult {
  Vector feature;  // unit norm
  Vector logits;
  Vector probs;
};

/// Per-sample activations kept for the backward pass.
struct SampleTrace {
  Vector input;
  Vector hidden;    // tanh(w1^T x + b1)
  Vector pre_norm;  // tanh(w2^T hidden + b2)
  double pre_norm_length = 0.0;
  ForwardResult out;
};

/// Upstream gradient for one sample: dL/dlogits and an extra dL/dfeature.
struct Upstream {
  Vector d_logits;
  Vector d_feature;

  static Upstream zeros(const ModelDims& dims) { return {Vector(dims.classes, 0.0), Vector(dims.feature, 0.0)}; }
};

/// feature = normalize(tanh(w2^T tanh(w1^T x + b1) + b2)), logits = wc^T feature + bc.
/// A pre-normalization vector of length <= 1e-12 maps to the first basis vector
/// and passes no gradient through the normalization.
ForwardResult forward(const ModelParams& params, std::span<const double> x);

struct SslConfig {
  double lambda_u = 1.0;
  double threshold = 0.95;
};

/// One unlabeled sample's view of the step: pseudo labels come from the weak view only.
struct UnlabeledRecord {
  ForwardResult weak;
  ForwardResult strong;
  std::size_t pseudo_label = 0;
  double confidence = 0.0;
  bool pseudo_gate = false;  // confidence >= threshold
};

/// Forward traces of one training step (labeled, unlabeled-weak, unlabeled-strong
/// views) plus an upstream-gradient slot for every sample. Loss terms deposit
/// their gradients here and a single backward pass turns them into Gradients.
class StepGraph {
 public:
  enum class View { labeled = 0, weak = 1, strong = 2 };

  StepGraph(const ModelParams& params, std::span<const Vector> labeled, std::span<const Vector> weak,
            std::span<const Vector> strong);

  std::size_t count(View v) const { return traces_[index(v)].size(); }
  const ForwardResult& result(View v, std::size_t i) const { return traces_[index(v)][i].out; }

  const Upstream& upstream(View v, std::size_t i) const { return upstream_[index(v)][i]; }

  void add_logit_grad(View v, std::size_t i, std::span<const double> g, double scale);
  void add_feature_grad(View v, std::size_t i, std::span<const double> g, double scale);

  Gradients backward() const;

 private:
  static std::size_t index(View v) { return static_cast<std::size_t>(v); }

  const ModelParams* params_;
  std::vector<SampleTrace> traces_[3];
  std::vector<Upstream> upstream_[3];
};

struct SslTerms {
  double supervised = 0.0;
  double unlabeled = 0.0;
  double total = 0.0;
  std::size_t gate_open = 0;
  std::vector<UnlabeledRecord> records;
};

/// Adds mean labeled CE + lambda_u * mean gated CE(strong, pseudo label) to the graph.
SslTerms add_ssl_terms(StepGraph& graph, std::span<const std::size_t> labels, const SslConfig& cfg);

/// Augmented views of one batch. Draw order: weak view of every labeled input,
/// then weak and strong view of each unlabeled input in turn.
struct StepViews {
  std::vector<Vector> labeled;
  std::vector<Vector> weak;
  std::vector<Vector> strong;
};
StepViews make_views(std::span<const Vector> labeled, std::span<const Vector> unlabeled, const AugmentConfig& aug,
                     Rng& rng);

struct SslLoss {
  SslTerms terms;
  Gradients grads;
};

SslLoss ssl_loss(const ModelParams& params, std::span<const Vector> labeled, std::span<const std::size_t> labels,
                 std::span<const Vector> unlabeled, Rng& rng, const SslConfig& cfg, const AugmentConfig& aug);

/// p <- p - lr * (g + weight_decay * p) on every tensor.
ModelParams sgd_step(ModelParams params, const Gradients& grads, double lr, double weight_decay);

}  // namespace osssl
