#include "osssl/pools.hpp"

#include <algorithm>
#include <set>
#include <string>

#include "osssl/errors.hpp"

namespace osssl {

bool SamplePool::contains(std::uint64_t uid) const {
  return std::any_of(entries.begin(), entries.end(), [&](const PoolEntry& e) { return e.uid == uid; });
}

std::vector<double> replacement_probabilities(const SamplePool& pool, std::size_t incoming, ReplacementRule rule) {
  std::vector<double> p(pool.entries.size(), 0.0);
  const double m = static_cast<double>(incoming);
  if (rule == ReplacementRule::random) {
    const double v = pool.capacity > 0 ? std::min(m / static_cast<double>(pool.capacity), 1.0) : 1.0;
    std::fill(p.begin(), p.end(), v);
    return p;
  }
  double total = 0.0;
  for (const auto& e : pool.entries) total += static_cast<double>(e.id_count);
  if (total <= 0.0) return p;
  for (std::size_t i = 0; i < p.size(); ++i)
    p[i] = std::min(m * static_cast<double>(pool.entries[i].id_count) / total, 1.0);
  return p;
}

std::vector<std::size_t> select_residents(std::span<const double> probs, Rng& rng) {
  std::vector<std::size_t> selected;
  for (std::size_t i = 0; i < probs.size(); ++i)
    if (rng.bernoulli(probs[i])) selected.push_back(i);
  return selected;
}

PoolUpdate update_pool(SamplePool& pool, std::span<const PoolEntry> incoming, Rng& rng, ReplacementRule rule) {
  std::vector<PoolEntry> fresh;
  std::set<std::uint64_t> seen;
  for (const auto& e : incoming)
    if (!pool.contains(e.uid) && seen.insert(e.uid).second) fresh.push_back(e);

  PoolUpdate up;
  const std::size_t m = fresh.size();
  if (m == 0) return up;
  const std::size_t free = pool.capacity - std::min(pool.capacity, pool.entries.size());
  if (free >= m) {
    for (const auto& e : fresh) {
      pool.entries.push_back(e);
      up.appended.push_back(e.uid);
    }
    return up;
  }

  const auto selected = select_residents(replacement_probabilities(pool, m, rule), rng);
  const std::size_t n = std::min(selected.size(), m);
  for (std::size_t r = 0; r < n; ++r) {
    auto& slot = pool.entries[selected[r]];
    up.replaced.push_back({slot.uid, fresh[r].uid});
    slot = fresh[r];
  }
  for (std::size_t r = n; r < m; ++r) up.discarded.push_back(fresh[r].uid);
  return up;
}

PoolPyramid::PoolPyramid(std::size_t classes, std::size_t pool_levels, std::size_t base_capacity)
    : classes_(classes), pool_levels_(pool_levels), base_capacity_(base_capacity) {
  for (std::size_t level = 1; level <= pool_levels; ++level)
    for (std::size_t s = 0; s < classes; ++s) pools_.push_back({s, capacity(level), {}});
}

std::size_t PoolPyramid::capacity(std::size_t level) const {
  if (level == 0 || level > pool_levels_) throw LevelOutOfRange("level " + std::to_string(level) + " has no pools");
  return base_capacity_ >> (level - 1);
}

SamplePool& PoolPyramid::pool(std::size_t level, std::size_t cls) {
  if (level == 0 || level > pool_levels_) throw LevelOutOfRange("level " + std::to_string(level) + " has no pools");
  return pools_.at((level - 1) * classes_ + cls);
}

const SamplePool& PoolPyramid::pool(std::size_t level, std::size_t cls) const {
  if (level == 0 || level > pool_levels_) throw LevelOutOfRange("level " + std::to_string(level) + " has no pools");
  return pools_.at((level - 1) * classes_ + cls);
}

std::size_t PoolPyramid::advance_level() {
  const std::size_t current = cursor_;
  cursor_ = (cursor_ + 1) % (pool_levels_ + 1);
  return current;
}

std::uint64_t PoolPyramid::id_count(std::uint64_t uid) const {
  auto it = id_counts_.find(uid);
  return it == id_counts_.end() ? 0 : it->second;
}

void PoolPyramid::restore_state(std::size_t cursor, std::size_t rotation, std::map<std::uint64_t, std::uint64_t> counts) {
  if (cursor > pool_levels_) throw CorruptCheckpoint("pyramid cursor out of range");
  cursor_ = cursor;
  rotation_ = rotation;
  id_counts_ = std::move(counts);
}

std::vector<std::vector<std::uint64_t>> record_identification(PoolPyramid& pyramid, std::size_t level,
                                                              std::span<const IdentificationResult> results) {
  if (level > pyramid.pool_levels_) throw LevelOutOfRange("level " + std::to_string(level));
  std::vector<std::vector<std::uint64_t>> by_class(pyramid.classes_);
  std::set<std::uint64_t> seen;
  for (const auto& r : results) {
    if (r.verdict != Verdict::id) continue;
    ++pyramid.id_counts_[r.uid];
    if (r.pseudo_class < by_class.size() && seen.insert(r.uid).second) by_class[r.pseudo_class].push_back(r.uid);
  }
  return by_class;
}

std::vector<PoolUpdate> feed_next_level(PoolPyramid& pyramid, std::size_t level,
                                        const std::vector<std::vector<std::uint64_t>>& by_class, Rng& rng,
                                        ReplacementRule rule) {
  if (level > pyramid.pool_levels()) throw LevelOutOfRange("level " + std::to_string(level));
  std::vector<PoolUpdate> updates;
  if (level == pyramid.pool_levels()) return updates;
  for (std::size_t s = 0; s < pyramid.classes(); ++s) {
    SamplePool& pool = pyramid.pool(level + 1, s);
    for (auto& e : pool.entries) e.id_count = std::max<std::uint64_t>(1, pyramid.id_count(e.uid));
    std::vector<PoolEntry> incoming;
    if (s < by_class.size())
      for (auto uid : by_class[s]) incoming.push_back({uid, std::max<std::uint64_t>(1, pyramid.id_count(uid))});
    updates.push_back(update_pool(pool, incoming, rng, rule));
  }
  return updates;
}

std::vector<std::uint64_t> draw_batch(PoolPyramid& pyramid, std::size_t level, std::size_t batch_size,
                                      std::span<const std::uint64_t> raw, Rng& rng) {
  if (raw.empty()) throw EmptyPyramidLevel("raw unlabeled set is empty");
  if (level > pyramid.pool_levels_) throw LevelOutOfRange("level " + std::to_string(level));
  std::vector<std::uint64_t> out;
  out.reserve(batch_size);
  std::size_t deficit = batch_size;
  if (level > 0) {
    const std::size_t classes = pyramid.classes_;
    const std::size_t base = batch_size / classes;
    const std::size_t extra = batch_size % classes;
    const std::size_t start = pyramid.rotation_ % classes;
    ++pyramid.rotation_;
    deficit = 0;
    for (std::size_t s = 0; s < classes; ++s) {
      const std::size_t offset = (s + classes - start) % classes;
      const std::size_t quota = base + (offset < extra ? 1 : 0);
      const auto& entries = pyramid.pool(level, s).entries;
      const auto picks = rng.sample_without_replacement(entries.size(), quota);
      for (auto i : picks) out.push_back(entries[i].uid);
      deficit += quota - picks.size();
    }
  }
  for (auto i : rng.sample_without_replacement(raw.size(), deficit)) out.push_back(raw[i]);
  return out;
}

Density id_density(std::span<const PoolEntry> entries, const DomainIndex& truth) {
  if (entries.empty()) return {};
  std::size_t ids = 0;
  for (const auto& e : entries)
    if (truth.domain(e.uid) == Domain::id) ++ids;
  return {static_cast<double>(ids) / static_cast<double>(entries.size()), false};
}

Density level_id_density(const PoolPyramid& pyramid, std::size_t level, const DomainIndex& truth) {
  std::vector<PoolEntry> all;
  for (std::size_t s = 0; s < pyramid.classes(); ++s) {
    const auto& e = pyramid.pool(level, s).entries;
    all.insert(all.end(), e.begin(), e.end());
  }
  return id_density(all, truth);
}

}  // namespace osssl
