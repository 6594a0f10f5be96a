#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "osssl/model.hpp"
#include "osssl/prototypes.hpp"
#include "osssl/synthdata.hpp"

namespace osssl {

struct ScoredSample {
  std::uint64_t uid = 0;
  double score = 0.0;  // higher means more ID-like
  Domain truth = Domain::id;
};

/// Top-1 accuracy on an all-ID labeled set. Throws EmptyTestSet.
double accuracy(const ModelParams& params, std::span<const Example> test);

/// Exact AUROC as the Mann-Whitney statistic P(s_ID > s_OOD) + P(equal) / 2,
/// via one sort with midranks for ties. Throws SingleClassInput.
double auroc(std::span<const ScoredSample> scores);

/// Maximum softmax probability on the raw input.
double ood_score_baseline(const ModelParams& params, std::span<const double> x);

/// Distance to the nearest OOD prototype of class s minus distance to the
/// nearest ID prototype; -(distance to nearest ID prototype) when class s has
/// no OOD prototype. Throws BankNotFlagged.
double ood_score_prototype(const PrototypeBank& bank, std::span<const double> feature, std::size_t pseudo_class);

}  // namespace osssl
