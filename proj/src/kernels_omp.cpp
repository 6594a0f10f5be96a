#include <cstdint>
#include <limits>
#include <string>

#include "osssl/errors.hpp"
#include "osssl/kernels.hpp"

namespace osssl::kernels::omp {

namespace {

// Exceptions must not escape an OpenMP region, so shapes are checked up front.
void check_inputs(const ModelParams& params, std::span<const Vector> inputs) {
  const std::size_t d = params.w1.rows();
  for (const auto& x : inputs) {
    if (x.size() != d) {
      throw DimensionMismatch("input has " + std::to_string(x.size()) + " entries, model expects " +
                              std::to_string(d));
    }
  }
}

void check_dims(std::span<const Vector> a, std::span<const Vector> b) {
  const std::size_t d = !a.empty() ? a.front().size() : (!b.empty() ? b.front().size() : 0);
  for (const auto& v : a)
    if (v.size() != d) throw DimensionMismatch("ragged point set");
  for (const auto& v : b)
    if (v.size() != d) throw DimensionMismatch("ragged point set");
}

}  // namespace

std::vector<SampleTrace> forward_batch(const ModelParams& params, std::span<const Vector> inputs) {
  check_inputs(params, inputs);
  std::vector<SampleTrace> out(inputs.size());
  const auto n = static_cast<std::int64_t>(inputs.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) out[i] = forward_one(params, inputs[i]);
  return out;
}

Gradients backward_batch(const ModelParams& params, std::span<const SampleTrace> traces,
                         std::span<const Upstream> upstream) {
  if (traces.size() != upstream.size()) throw DimensionMismatch("trace/upstream count differs");
  const ModelDims dims = params.dims();
  const auto n = static_cast<std::int64_t>(traces.size());

  std::vector<Gradients> per_sample(traces.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    per_sample[i] = Gradients::zeros(dims);
    backward_one(params, traces[i], upstream[i], per_sample[i]);
  }

  // Reduce in sample order for every parameter; parallel over parameters.
  Gradients total = Gradients::zeros(dims);
  std::vector<std::span<double>> dst;
  total.for_each([&](std::span<double> t) { dst.push_back(t); });
  std::vector<std::vector<std::span<const double>>> src(traces.size());
  for (std::size_t s = 0; s < per_sample.size(); ++s) {
    std::as_const(per_sample[s]).for_each([&](std::span<const double> t) { src[s].push_back(t); });
  }
  for (std::size_t t = 0; t < dst.size(); ++t) {
    const auto len = static_cast<std::int64_t>(dst[t].size());
#pragma omp parallel for schedule(static)
    for (std::int64_t e = 0; e < len; ++e) {
      double acc = 0.0;
      for (std::size_t s = 0; s < src.size(); ++s) acc += src[s][t][e];
      dst[t][e] = acc;
    }
  }
  return total;
}

Matrix pairwise_sq_distances(std::span<const Vector> a, std::span<const Vector> b) {
  check_dims(a, b);
  Matrix out(a.size(), b.size());
  const auto n = static_cast<std::int64_t>(a.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a[i].size(); ++k) {
        const double d = a[i][k] - b[j][k];
        s += d * d;
      }
      out(i, j) = s;
    }
  }
  return out;
}

void assign_nearest(std::span<const Vector> points, std::span<const Vector> centers, std::span<std::size_t> labels,
                    std::span<double> sq_dists) {
  check_dims(points, centers);
  const auto n = static_cast<std::int64_t>(points.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_k = 0;
    for (std::size_t k = 0; k < centers.size(); ++k) {
      double s = 0.0;
      for (std::size_t c = 0; c < points[i].size(); ++c) {
        const double d = points[i][c] - centers[k][c];
        s += d * d;
      }
      if (s < best) {
        best = s;
        best_k = k;
      }
    }
    labels[i] = best_k;
    sq_dists[i] = best;
  }
}

}  // namespace osssl::kernels::omp
