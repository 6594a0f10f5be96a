#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "osssl/identify.hpp"
#include "osssl/numerics.hpp"
#include "osssl/synthdata.hpp"

namespace osssl {

struct PoolEntry {
  std::uint64_t uid = 0;
  std::uint64_t id_count = 1;  // I: times identified as ID; importance score is 1 / I

  double importance() const { return 1.0 / static_cast<double>(id_count); }
  bool operator==(const PoolEntry&) const = default;
};

/// How residents are chosen for eviction when a pool is full.
enum class ReplacementRule {
  importance,  // P_i = min(M * I_i / sum_j I_j, 1)
  random,      // P_i = min(M / capacity, 1)
};

struct SamplePool {
  std::size_t cls = 0;
  std::size_t capacity = 0;
  std::vector<PoolEntry> entries;

  bool contains(std::uint64_t uid) const;
  bool operator==(const SamplePool&) const = default;
};

struct Replacement {
  std::uint64_t evicted = 0;
  std::uint64_t inserted = 0;
};

struct PoolUpdate {
  std::vector<std::uint64_t> appended;
  std::vector<Replacement> replaced;
  std::vector<std::uint64_t> discarded;
};

/// Per-resident eviction probabilities for M incoming samples.
std::vector<double> replacement_probabilities(const SamplePool& pool, std::size_t incoming, ReplacementRule rule);

/// One independent Bernoulli(probs[i]) draw per resident; selected indices in list order.
std::vector<std::size_t> select_residents(std::span<const double> probs, Rng& rng);

/// Case 1 (room for all M): append. Case 2: select each resident independently
/// with its replacement probability, then overwrite the first min(N_r, M)
/// selected residents (list order) with the first min(N_r, M) incoming entries
/// and drop the rest. Incoming uids already resident are skipped.
PoolUpdate update_pool(SamplePool& pool, std::span<const PoolEntry> incoming, Rng& rng,
                       ReplacementRule rule = ReplacementRule::importance);

/// Level 0 is the raw unlabeled set (no pools); level l in [1, N] holds one pool
/// per class with capacity N_p / 2^(l-1).
class PoolPyramid {
 public:
  PoolPyramid() = default;
  PoolPyramid(std::size_t classes, std::size_t pool_levels, std::size_t base_capacity);

  std::size_t classes() const noexcept { return classes_; }
  std::size_t pool_levels() const noexcept { return pool_levels_; }
  std::size_t base_capacity() const noexcept { return base_capacity_; }
  std::size_t capacity(std::size_t level) const;

  SamplePool& pool(std::size_t level, std::size_t cls);
  const SamplePool& pool(std::size_t level, std::size_t cls) const;

  std::size_t cursor() const noexcept { return cursor_; }
  /// Returns the current level and moves the cursor to the next one (0, 1, ..., N, 0, ...).
  std::size_t advance_level();

  /// Global identification counters I(uid).
  const std::map<std::uint64_t, std::uint64_t>& id_counts() const noexcept { return id_counts_; }
  std::uint64_t id_count(std::uint64_t uid) const;

  // Checkpoint restore.
  void restore_state(std::size_t cursor, std::size_t rotation, std::map<std::uint64_t, std::uint64_t> counts);
  std::size_t rotation() const noexcept { return rotation_; }

  bool operator==(const PoolPyramid&) const = default;

 private:
  friend std::vector<std::vector<std::uint64_t>> record_identification(PoolPyramid&, std::size_t,
                                                                       std::span<const IdentificationResult>);
  friend std::vector<std::uint64_t> draw_batch(PoolPyramid&, std::size_t, std::size_t, std::span<const std::uint64_t>,
                                               Rng&);

  std::size_t classes_ = 0;
  std::size_t pool_levels_ = 0;
  std::size_t base_capacity_ = 0;
  std::vector<SamplePool> pools_;  // level-major, levels 1..N
  std::size_t cursor_ = 0;
  std::size_t rotation_ = 0;
  std::map<std::uint64_t, std::uint64_t> id_counts_;
};

/// Bumps I for every ID verdict and returns the ID uids grouped by pseudo
/// class (distinct, first-seen order). Throws LevelOutOfRange.
std::vector<std::vector<std::uint64_t>> record_identification(PoolPyramid& pyramid, std::size_t level,
                                                              std::span<const IdentificationResult> results);

/// Feeds samples identified at `level` into the pools of level + 1. Resident
/// counters are refreshed from the global I first. Returns one update per
/// class; empty when `level` is the top level.
std::vector<PoolUpdate> feed_next_level(PoolPyramid& pyramid, std::size_t level,
                                        const std::vector<std::vector<std::uint64_t>>& by_class, Rng& rng,
                                        ReplacementRule rule);

/// Level 0: B uniform draws (without replacement) from `raw`. Level l >= 1:
/// floor(B/S) per class plus one for B mod S classes starting at a rotating
/// offset, uniform without replacement inside each pool; any shortfall is drawn
/// from `raw`. Throws EmptyPyramidLevel when `raw` is empty, LevelOutOfRange.
std::vector<std::uint64_t> draw_batch(PoolPyramid& pyramid, std::size_t level, std::size_t batch_size,
                                      std::span<const std::uint64_t> raw, Rng& rng);

struct Density {
  double value = 0.0;
  bool empty = true;
};

/// Fraction of entries whose true domain is ID; 0 with empty = true for no entries.
Density id_density(std::span<const PoolEntry> entries, const DomainIndex& truth);
Density level_id_density(const PoolPyramid& pyramid, std::size_t level, const DomainIndex& truth);

}  // namespace osssl
