#include "osssl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "osssl/errors.hpp"
#include "osssl/kernels.hpp"

namespace osssl {

double accuracy(const ModelParams& params, std::span<const Example> test) {
  if (test.empty()) throw EmptyTestSet("no test examples");
  std::vector<Vector> xs;
  xs.reserve(test.size());
  for (const auto& e : test) {
    if (e.domain != Domain::id || !e.true_class) throw InvariantViolation("test set must be labeled ID data");
    xs.push_back(e.x);
  }
  const auto traces = kernels::forward_batch(params, xs);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& p = traces[i].out.probs;
    const auto pred = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    if (pred == *test[i].true_class) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

double auroc(std::span<const ScoredSample> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a].score < scores[b].score; });

  // Sum of doubled midranks of the ID samples keeps everything integral.
  std::uint64_t n_id = 0;
  std::uint64_t rank2_sum = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]].score == scores[order[i]].score) ++j;
    const std::uint64_t midrank2 = i + j + 1;  // 2 * average of 1-based ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (scores[order[k]].truth == Domain::id) {
        ++n_id;
        rank2_sum += midrank2;
      }
    }
    i = j;
  }
  const std::uint64_t n_ood = scores.size() - n_id;
  if (n_id == 0 || n_ood == 0) throw SingleClassInput("AUROC needs both ID and OOD samples");
  // 2U = 2 * R_id - n_id (n_id + 1)
  const std::uint64_t u2 = rank2_sum - n_id * (n_id + 1);
  return static_cast<double>(u2) / (2.0 * static_cast<double>(n_id) * static_cast<double>(n_ood));
}

double ood_score_baseline(const ModelParams& params, std::span<const double> x) {
  const auto r = forward(params, x);
  return *std::max_element(r.probs.begin(), r.probs.end());
}

double ood_score_prototype(const PrototypeBank& bank, std::span<const double> feature, std::size_t pseudo_class) {
  if (!bank.flagged()) throw BankNotFlagged("prototype score needs flagged prototypes");
  const auto protos = bank.class_prototypes(pseudo_class);
  double near_id = std::numeric_limits<double>::infinity();
  double near_ood = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < protos.size(); ++j) {
    const double d = std::sqrt(squared_distance(feature, protos[j]));
    if (bank.is_id(pseudo_class, j))
      near_id = std::min(near_id, d);
    else
      near_ood = std::min(near_ood, d);
  }
  if (std::isinf(near_ood)) return -near_id;
  return near_ood - near_id;
}

}  // namespace osssl
