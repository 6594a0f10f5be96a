#include "osssl/model.hpp"

#include <algorithm>
#include <cmath>

#include "osssl/errors.hpp"
#include "osssl/kernels.hpp"

namespace osssl {

ParamTensors ParamTensors::zeros(const ModelDims& d) {
  return {Matrix(d.input, d.hidden), Vector(d.hidden, 0.0), Matrix(d.hidden, d.feature),
          Vector(d.feature, 0.0),    Matrix(d.feature, d.classes), Vector(d.classes, 0.0)};
}

void ParamTensors::for_each(const std::function<void(std::span<double>)>& fn) {
  fn(w1.flat());
  fn(b1);
  fn(w2.flat());
  fn(b2);
  fn(wc.flat());
  fn(bc);
}

void ParamTensors::for_each(const std::function<void(std::span<const double>)>& fn) const {
  fn(w1.flat());
  fn(b1);
  fn(w2.flat());
  fn(b2);
  fn(wc.flat());
  fn(bc);
}

std::size_t ParamTensors::parameter_count() const {
  std::size_t n = 0;
  for_each([&](std::span<const double> t) { n += t.size(); });
  return n;
}

bool ParamTensors::all_finite() const {
  bool ok = true;
  for_each([&](std::span<const double> t) {
    ok = ok && std::all_of(t.begin(), t.end(), [](double v) { return std::isfinite(v); });
  });
  return ok;
}

ModelParams init_params(const ModelDims& dims, Rng& rng) {
  ModelParams p = ModelParams::zeros(dims);
  auto fill = [&](Matrix& m) {
    const double a = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
    for (double& v : m.flat()) v = (2.0 * rng.uniform() - 1.0) * a;
  };
  fill(p.w1);
  fill(p.w2);
  fill(p.wc);
  return p;
}

ForwardResult forward(const ModelParams& params, std::span<const double> x) {
  return kernels::forward_one(params, x).out;
}

// --- StepGraph ---------------------------------------------------------------

StepGraph::StepGraph(const ModelParams& params, std::span<const Vector> labeled, std::span<const Vector> weak,
                     std::span<const Vector> strong)
    : params_(&params) {
  const std::span<const Vector> views[3] = {labeled, weak, strong};
  const ModelDims dims = params.dims();
  for (std::size_t v = 0; v < 3; ++v) {
    traces_[v] = kernels::forward_batch(params, views[v]);
    upstream_[v].assign(views[v].size(), Upstream::zeros(dims));
  }
}

void StepGraph::add_logit_grad(View v, std::size_t i, std::span<const double> g, double scale) {
  auto& dst = upstream_[index(v)].at(i).d_logits;
  if (g.size() != dst.size()) throw DimensionMismatch("logit gradient size");
  for (std::size_t k = 0; k < g.size(); ++k) dst[k] += scale * g[k];
}

void StepGraph::add_feature_grad(View v, std::size_t i, std::span<const double> g, double scale) {
  auto& dst = upstream_[index(v)].at(i).d_feature;
  if (g.size() != dst.size()) throw DimensionMismatch("feature gradient size");
  for (std::size_t k = 0; k < g.size(); ++k) dst[k] += scale * g[k];
}

Gradients StepGraph::backward() const {
  std::vector<SampleTrace> traces;
  std::vector<Upstream> upstream;
  for (std::size_t v = 0; v < 3; ++v) {
    traces.insert(traces.end(), traces_[v].begin(), traces_[v].end());
    upstream.insert(upstream.end(), upstream_[v].begin(), upstream_[v].end());
  }
  return kernels::backward_batch(*params_, traces, upstream);
}

// --- losses ------------------------------------------------------------------

namespace {

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// -log softmax(logits)[target]; probs are the matching softmax.
double cross_entropy(const ForwardResult& r, std::size_t target) {
  return log_sum_exp(r.logits) - r.logits[target];
}

Vector ce_logit_grad(const ForwardResult& r, std::size_t target) {
  Vector g = r.probs;
  g[target] -= 1.0;
  return g;
}

}  // namespace

SslTerms add_ssl_terms(StepGraph& graph, std::span<const std::size_t> labels, const SslConfig& cfg) {
  using View = StepGraph::View;
  SslTerms t;
  const std::size_t nl = graph.count(View::labeled);
  if (labels.size() != nl) throw DimensionMismatch("label count differs from labeled batch");
  if (nl > 0) {
    const double inv = 1.0 / static_cast<double>(nl);
    for (std::size_t i = 0; i < nl; ++i) {
      const auto& r = graph.result(View::labeled, i);
      t.supervised += cross_entropy(r, labels[i]);
      graph.add_logit_grad(View::labeled, i, ce_logit_grad(r, labels[i]), inv);
    }
    t.supervised *= inv;
  }

  const std::size_t nu = graph.count(View::weak);
  t.records.reserve(nu);
  const double scale = nu > 0 ? cfg.lambda_u / static_cast<double>(nu) : 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < nu; ++i) {
    UnlabeledRecord rec;
    rec.weak = graph.result(View::weak, i);
    rec.strong = graph.result(View::strong, i);
    rec.pseudo_label = argmax(rec.weak.probs);
    rec.confidence = rec.weak.probs[rec.pseudo_label];
    rec.pseudo_gate = rec.confidence >= cfg.threshold;
    if (rec.pseudo_gate) {
      ++t.gate_open;
      sum += cross_entropy(rec.strong, rec.pseudo_label);
      graph.add_logit_grad(View::strong, i, ce_logit_grad(rec.strong, rec.pseudo_label), scale);
    }
    t.records.push_back(std::move(rec));
  }
  t.unlabeled = nu > 0 ? cfg.lambda_u * sum / static_cast<double>(nu) : 0.0;
  t.total = t.supervised + t.unlabeled;
  return t;
}

StepViews make_views(std::span<const Vector> labeled, std::span<const Vector> unlabeled, const AugmentConfig& aug,
                     Rng& rng) {
  StepViews v;
  v.labeled.reserve(labeled.size());
  for (const auto& x : labeled) v.labeled.push_back(augment(x, Strength::weak, aug, rng));
  v.weak.reserve(unlabeled.size());
  v.strong.reserve(unlabeled.size());
  for (const auto& x : unlabeled) {
    v.weak.push_back(augment(x, Strength::weak, aug, rng));
    v.strong.push_back(augment(x, Strength::strong, aug, rng));
  }
  return v;
}

SslLoss ssl_loss(const ModelParams& params, std::span<const Vector> labeled, std::span<const std::size_t> labels,
                 std::span<const Vector> unlabeled, Rng& rng, const SslConfig& cfg, const AugmentConfig& aug) {
  const StepViews views = make_views(labeled, unlabeled, aug, rng);
  StepGraph graph(params, views.labeled, views.weak, views.strong);
  SslLoss out;
  out.terms = add_ssl_terms(graph, labels, cfg);
  out.grads = graph.backward();
  return out;
}

ModelParams sgd_step(ModelParams params, const Gradients& grads, double lr, double weight_decay) {
  if (params.dims() != grads.dims()) throw DimensionMismatch("gradient shape differs from parameters");
  std::vector<std::span<const double>> g;
  grads.for_each([&](std::span<const double> t) { g.push_back(t); });
  std::size_t ti = 0;
  params.for_each([&](std::span<double> p) {
    const auto gt = g[ti++];
    for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * (gt[i] + weight_decay * p[i]);
  });
  return params;
}

}  // namespace osssl
