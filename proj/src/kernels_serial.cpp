#include <cmath>
#include <limits>
#include <string>

#include "osssl/errors.hpp"
#include "osssl/kernels.hpp"

namespace osssl::kernels {

Backend default_backend() {
#ifdef OSSSL_HAVE_OPENMP
  return Backend::omp;
#else
  return Backend::serial;
#endif
}

SampleTrace forward_one(const ModelParams& params, std::span<const double> x) {
  const ModelDims dims = params.dims();
  if (x.size() != dims.input) {
    throw DimensionMismatch("input has " + std::to_string(x.size()) + " entries, model expects " +
                            std::to_string(dims.input));
  }
  SampleTrace t;
  t.input.assign(x.begin(), x.end());

  t.hidden = params.b1;
  for (std::size_t i = 0; i < dims.input; ++i) {
    const double xi = x[i];
    const auto w = params.w1.row(i);
    for (std::size_t j = 0; j < dims.hidden; ++j) t.hidden[j] += w[j] * xi;
  }
  for (double& h : t.hidden) h = std::tanh(h);

  t.pre_norm = params.b2;
  for (std::size_t i = 0; i < dims.hidden; ++i) {
    const double hi = t.hidden[i];
    const auto w = params.w2.row(i);
    for (std::size_t j = 0; j < dims.feature; ++j) t.pre_norm[j] += w[j] * hi;
  }
  for (double& u : t.pre_norm) u = std::tanh(u);

  double sq = 0.0;
  for (double u : t.pre_norm) sq += u * u;
  t.pre_norm_length = std::sqrt(sq);

  t.out.feature.assign(dims.feature, 0.0);
  if (t.pre_norm_length > 1e-12) {
    for (std::size_t j = 0; j < dims.feature; ++j) t.out.feature[j] = t.pre_norm[j] / t.pre_norm_length;
  } else {
    t.out.feature[0] = 1.0;
  }

  t.out.logits = params.bc;
  for (std::size_t i = 0; i < dims.feature; ++i) {
    const double fi = t.out.feature[i];
    const auto w = params.wc.row(i);
    for (std::size_t k = 0; k < dims.classes; ++k) t.out.logits[k] += w[k] * fi;
  }
  t.out.probs = softmax(t.out.logits, 1.0);
  return t;
}

void backward_one(const ModelParams& params, const SampleTrace& t, const Upstream& up, Gradients& g) {
  const ModelDims dims = params.dims();

  Vector g_feat = up.d_feature;
  for (std::size_t i = 0; i < dims.feature; ++i) {
    const auto w = params.wc.row(i);
    double s = 0.0;
    for (std::size_t k = 0; k < dims.classes; ++k) s += w[k] * up.d_logits[k];
    g_feat[i] += s;
  }
  for (std::size_t i = 0; i < dims.feature; ++i) {
    auto gw = g.wc.row(i);
    const double fi = t.out.feature[i];
    for (std::size_t k = 0; k < dims.classes; ++k) gw[k] += fi * up.d_logits[k];
  }
  for (std::size_t k = 0; k < dims.classes; ++k) g.bc[k] += up.d_logits[k];

  // Through the normalization: project onto the tangent space at the feature.
  Vector d_pre(dims.feature, 0.0);
  if (t.pre_norm_length > 1e-12) {
    double radial = 0.0;
    for (std::size_t j = 0; j < dims.feature; ++j) radial += t.out.feature[j] * g_feat[j];
    for (std::size_t j = 0; j < dims.feature; ++j) {
      const double du = (g_feat[j] - t.out.feature[j] * radial) / t.pre_norm_length;
      d_pre[j] = du * (1.0 - t.pre_norm[j] * t.pre_norm[j]);
    }
  }

  for (std::size_t i = 0; i < dims.hidden; ++i) {
    auto gw = g.w2.row(i);
    const double hi = t.hidden[i];
    for (std::size_t j = 0; j < dims.feature; ++j) gw[j] += hi * d_pre[j];
  }
  for (std::size_t j = 0; j < dims.feature; ++j) g.b2[j] += d_pre[j];

  Vector d_hidden(dims.hidden, 0.0);
  for (std::size_t i = 0; i < dims.hidden; ++i) {
    const auto w = params.w2.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < dims.feature; ++j) s += w[j] * d_pre[j];
    d_hidden[i] = s * (1.0 - t.hidden[i] * t.hidden[i]);
  }

  for (std::size_t i = 0; i < dims.input; ++i) {
    auto gw = g.w1.row(i);
    const double xi = t.input[i];
    for (std::size_t j = 0; j < dims.hidden; ++j) gw[j] += xi * d_hidden[j];
  }
  for (std::size_t j = 0; j < dims.hidden; ++j) g.b1[j] += d_hidden[j];
}

namespace {

void check_dims(std::span<const Vector> a, std::span<const Vector> b) {
  const std::size_t d = !a.empty() ? a.front().size() : (!b.empty() ? b.front().size() : 0);
  for (const auto& v : a)
    if (v.size() != d) throw DimensionMismatch("ragged point set");
  for (const auto& v : b)
    if (v.size() != d) throw DimensionMismatch("ragged point set");
}

}  // namespace

namespace serial {

std::vector<SampleTrace> forward_batch(const ModelParams& params, std::span<const Vector> inputs) {
  std::vector<SampleTrace> out;
  out.reserve(inputs.size());
  for (const auto& x : inputs) out.push_back(forward_one(params, x));
  return out;
}

Gradients backward_batch(const ModelParams& params, std::span<const SampleTrace> traces,
                         std::span<const Upstream> upstream) {
  if (traces.size() != upstream.size()) throw DimensionMismatch("trace/upstream count differs");
  Gradients g = Gradients::zeros(params.dims());
  for (std::size_t n = 0; n < traces.size(); ++n) backward_one(params, traces[n], upstream[n], g);
  return g;
}

Matrix pairwise_sq_distances(std::span<const Vector> a, std::span<const Vector> b) {
  check_dims(a, b);
  Matrix out(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) out(i, j) = squared_distance(a[i], b[j]);
  return out;
}

void assign_nearest(std::span<const Vector> points, std::span<const Vector> centers, std::span<std::size_t> labels,
                    std::span<double> sq_dists) {
  check_dims(points, centers);
  for (std::size_t i = 0; i < points.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_k = 0;
    for (std::size_t k = 0; k < centers.size(); ++k) {
      const double d = squared_distance(points[i], centers[k]);
      if (d < best) {
        best = d;
        best_k = k;
      }
    }
    labels[i] = best_k;
    sq_dists[i] = best;
  }
}

}  // namespace serial

std::vector<SampleTrace> forward_batch(const ModelParams& params, std::span<const Vector> inputs, Backend backend) {
  return backend == Backend::omp ? omp::forward_batch(params, inputs) : serial::forward_batch(params, inputs);
}

Gradients backward_batch(const ModelParams& params, std::span<const SampleTrace> traces,
                         std::span<const Upstream> upstream, Backend backend) {
  return backend == Backend::omp ? omp::backward_batch(params, traces, upstream)
                                 : serial::backward_batch(params, traces, upstream);
}

Matrix pairwise_sq_distances(std::span<const Vector> a, std::span<const Vector> b, Backend backend) {
  return backend == Backend::omp ? omp::pairwise_sq_distances(a, b) : serial::pairwise_sq_distances(a, b);
}

void assign_nearest(std::span<const Vector> points, std::span<const Vector> centers, std::span<std::size_t> labels,
                    std::span<double> sq_dists, Backend backend) {
  if (backend == Backend::omp)
    omp::assign_nearest(points, centers, labels, sq_dists);
  else
    serial::assign_nearest(points, centers, labels, sq_dists);
}

}  // namespace osssl::kernels
