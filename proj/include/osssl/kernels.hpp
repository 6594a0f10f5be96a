#pragma once

// Data-parallel kernels behind the model, prototype and metric code paths.
//
// Every kernel exists twice: serial:: is the reference, omp:: fans the
// per-sample (or per-point) work out over OpenMP threads. Both variants run the
// same per-item arithmetic and reduce in the same left-to-right order, so their
// results are bitwise identical for any thread count.

#include <cstddef>
#include <span>
#include <vector>

#include "osssl/model.hpp"
#include "osssl/numerics.hpp"

namespace osssl::kernels {

enum class Backend { serial, omp };

/// omp when the library was built with OpenMP, serial otherwise.
Backend default_backend();

SampleTrace forward_one(const ModelParams& params, std::span<const double> x);

/// Adds one sample's parameter gradient into `accum`. Each parameter receives
/// exactly one addition per call.
void backward_one(const ModelParams& params, const SampleTrace& trace, const Upstream& upstream, Gradients& accum);

namespace serial {
std::vector<SampleTrace> forward_batch(const ModelParams& params, std::span<const Vector> inputs);
Gradients backward_batch(const ModelParams& params, std::span<const SampleTrace> traces,
                         std::span<const Upstream> upstream);
Matrix pairwise_sq_distances(std::span<const Vector> a, std::span<const Vector> b);
/// Index of (and squared distance to) the nearest center per point; ties go to the lower index.
void assign_nearest(std::span<const Vector> points, std::span<const Vector> centers, std::span<std::size_t> labels,
                    std::span<double> sq_dists);
}  // namespace serial

namespace omp {
std::vector<SampleTrace> forward_batch(const ModelParams& params, std::span<const Vector> inputs);
Gradients backward_batch(const ModelParams& params, std::span<const SampleTrace> traces,
                         std::span<const Upstream> upstream);
Matrix pairwise_sq_distances(std::span<const Vector> a, std::span<const Vector> b);
void assign_nearest(std::span<const Vector> points, std::span<const Vector> centers, std::span<std::size_t> labels,
                    std::span<double> sq_dists);
}  // namespace omp

std::vector<SampleTrace> forward_batch(const ModelParams& params, std::span<const Vector> inputs,
                                       Backend backend = default_backend());
Gradients backward_batch(const ModelParams& params, std::span<const SampleTrace> traces,
                         std::span<const Upstream> upstream, Backend backend = default_backend());
Matrix pairwise_sq_distances(std::span<const Vector> a, std::span<const Vector> b,
                             Backend backend = default_backend());
void assign_nearest(std::span<const Vector> points, std::span<const Vector> centers, std::span<std::size_t> labels,
                    std::span<double> sq_dists, Backend backend = default_backend());

}  // namespace osssl::kernels
