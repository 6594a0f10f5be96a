#include <algorithm>
#include <numeric>

#include "doctest.h"
#include "osssl/errors.hpp"
#include "osssl/identify.hpp"
#include "test_util.hpp"

using namespace osssl;

namespace {

PrototypeBank random_bank(Rng& rng, std::size_t classes, std::size_t k, std::size_t dim) {
  PrototypeBank b(classes, k, dim);
  for (std::size_t s = 0; s < classes; ++s)
    for (std::size_t j = 0; j < k; ++j) b.set_prototype(s, j, testutil::random_unit(rng, dim));
  b.mark_initialized();
  return b;
}

ForwardResult view(Vector feature, double confidence, std::size_t cls) {
  ForwardResult r;
  r.feature = std::move(feature);
  r.probs.assign(3, (1.0 - confidence) / 2.0);
  r.probs[cls] = confidence;
  r.logits.assign(3, 0.0);
  return r;
}

// Random orthogonal map via Gram-Schmidt on a Gaussian matrix.
std::vector<Vector> random_rotation(Rng& rng, std::size_t d) {
  std::vector<Vector> q;
  while (q.size() < d) {
    Vector v = testutil::random_vector(rng, d);
    for (const auto& u : q) {
      const double c = dot(v, u);
      for (std::size_t i = 0; i < d; ++i) v[i] -= c * u[i];
    }
    q.push_back(l2_normalize(v));
  }
  return q;
}

Vector rotate(const std::vector<Vector>& q, const Vector& v) {
  Vector out(v.size(), 0.0);
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = dot(q[i], v);
  return out;
}

}  // namespace

TEST_SUITE("identify") {

TEST_CASE("labeled feature means are plain means") {
  Rng rng(61);
  const auto f = testutil::random_unit(rng, 4);
  CHECK(labeled_feature_means({{f}})[0] == f);
  Vector neg = f;
  for (double& v : neg) v = -v;
  CHECK(labeled_feature_means({{f, neg}})[0] == Vector(4, 0.0));
  CHECK_THROWS_AS(labeled_feature_means({{f}, {}}), EmptyClass);

  std::vector<Vector> cls;
  Vector mean(4, 0.0);
  for (int i = 0; i < 7; ++i) {
    cls.push_back(testutil::random_unit(rng, 4));
    for (int k = 0; k < 4; ++k) mean[k] += cls.back()[k] / 7.0;
  }
  CHECK(testutil::max_abs_diff(labeled_feature_means({cls})[0], mean) <= 1e-15);
}

TEST_CASE("flag_id_prototypes") {
  Rng rng(62);
  SUBCASE("n_id = K flags everything") {
    auto bank = random_bank(rng, 2, 4, 3);
    flag_id_prototypes(bank, {testutil::random_unit(rng, 3), testutil::random_unit(rng, 3)}, 4);
    for (std::size_t s = 0; s < 2; ++s)
      for (std::size_t j = 0; j < 4; ++j) CHECK(bank.is_id(s, j));
    CHECK(bank.flagged());
  }
  SUBCASE("the prototype at the center wins over its antipode") {
    PrototypeBank bank(1, 2, 2);
    bank.set_prototype(0, 0, {-1.0, 0.0});
    bank.set_prototype(0, 1, {1.0, 0.0});
    bank.mark_initialized();
    flag_id_prototypes(bank, {{1.0, 0.0}}, 1);
    CHECK_FALSE(bank.is_id(0, 0));
    CHECK(bank.is_id(0, 1));
  }
  SUBCASE("ties go to the lower index") {
    PrototypeBank bank(1, 3, 2);
    bank.set_prototype(0, 0, {0.0, 1.0});
    bank.set_prototype(0, 1, {1.0, 0.0});
    bank.set_prototype(0, 2, {-1.0, 0.0});
    bank.mark_initialized();
    flag_id_prototypes(bank, {{0.0, 0.0}}, 2);
    CHECK(bank.is_id(0, 0));
    CHECK(bank.is_id(0, 1));
    CHECK_FALSE(bank.is_id(0, 2));
  }
  SUBCASE("invalid n_id and uninitialized bank") {
    auto bank = random_bank(rng, 1, 3, 2);
    CHECK_THROWS_AS(flag_id_prototypes(bank, {{0.0, 1.0}}, 0), InvalidNid);
    CHECK_THROWS_AS(flag_id_prototypes(bank, {{0.0, 1.0}}, 4), InvalidNid);
    PrototypeBank fresh(1, 3, 2);
    CHECK_THROWS_AS(flag_id_prototypes(fresh, {{0.0, 1.0}}, 1), BankNotInitialized);
  }
}

TEST_CASE("flagging matches a full sort and counts exactly n_id per class") {
  Rng rng(63);
  for (int t = 0; t < 30; ++t) {
    const std::size_t k = 10;
    const std::size_t n_id = k / 5;
    auto bank = random_bank(rng, 3, k, 5);
    std::vector<Vector> centers;
    for (int s = 0; s < 3; ++s) centers.push_back(testutil::random_vector(rng, 5, 0.5));
    flag_id_prototypes(bank, centers, n_id);
    for (std::size_t s = 0; s < 3; ++s) {
      std::vector<std::pair<double, std::size_t>> order;
      for (std::size_t j = 0; j < k; ++j) order.emplace_back(squared_distance(bank.prototype(s, j), centers[s]), j);
      std::sort(order.begin(), order.end());
      std::size_t count = 0;
      for (std::size_t r = 0; r < k; ++r) {
        CHECK(bank.is_id(s, order[r].second) == (r < n_id));
        count += bank.is_id(s, r);
      }
      CHECK(count == n_id);
    }
  }
}

TEST_CASE("flagging is invariant under a common rotation") {
  Rng rng(64);
  for (std::size_t d : {2u, 5u, 8u}) {
    for (int t = 0; t < 10; ++t) {
      auto bank = random_bank(rng, 2, 6, d);
      std::vector<Vector> centers{testutil::random_vector(rng, d, 0.5), testutil::random_vector(rng, d, 0.5)};
      const auto q = random_rotation(rng, d);
      PrototypeBank rotated(2, 6, d);
      for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t j = 0; j < 6; ++j) rotated.set_prototype(s, j, rotate(q, bank.prototype(s, j)));
      rotated.mark_initialized();
      std::vector<Vector> rc{rotate(q, centers[0]), rotate(q, centers[1])};
      flag_id_prototypes(bank, centers, 2);
      flag_id_prototypes(rotated, rc, 2);
      for (std::size_t s = 0; s < 2; ++s)
        for (std::size_t j = 0; j < 6; ++j) CHECK(bank.is_id(s, j) == rotated.is_id(s, j));
    }
  }
}

TEST_CASE("identify_sample") {
  Rng rng(65);
  ClusterConfig cfg;
  auto bank = random_bank(rng, 3, 5, 4);

  CHECK_THROWS_AS(identify_sample(bank, 1, view(testutil::random_unit(rng, 4), 0.999, 0), 0, cfg), BankNotFlagged);

  std::vector<Vector> centers;
  for (int s = 0; s < 3; ++s) centers.push_back(testutil::random_vector(rng, 4, 0.5));
  flag_id_prototypes(bank, centers, 1);

  SUBCASE("a feature sitting on an ID prototype is ID") {
    for (std::size_t s = 0; s < 3; ++s) {
      for (std::size_t j = 0; j < 5; ++j) {
        const auto r = identify_sample(bank, 9, view(bank.prototype(s, j), 0.999, s), s, cfg);
        CHECK(r.nearest_prototype == j);
        CHECK(r.verdict == (bank.is_id(s, j) ? Verdict::id : Verdict::ood));
        CHECK(r.uid == 9);
        CHECK(r.pseudo_class == s);
      }
    }
  }
  SUBCASE("a closed gate is ungated whatever the geometry") {
    const auto r = identify_sample(bank, 3, view(bank.prototype(0, 0), cfg.confidence_threshold, 0), 0, cfg);
    CHECK(r.verdict == Verdict::ungated);
    CHECK_FALSE(r.nearest_prototype.has_value());
  }
  SUBCASE("agrees with a brute-force nearest-prototype lookup") {
    for (int t = 0; t < 500; ++t) {
      const std::size_t s = rng.uniform_index(3);
      const auto f = testutil::random_unit(rng, 4);
      const auto r = identify_sample(bank, t, view(f, 0.999, s), s, cfg);
      std::size_t best = 0;
      for (std::size_t j = 1; j < 5; ++j)
        if (squared_distance(f, bank.prototype(s, j)) < squared_distance(f, bank.prototype(s, best))) best = j;
      CHECK(r.nearest_prototype == best);
      CHECK(r.verdict == (bank.is_id(s, best) ? Verdict::id : Verdict::ood));
    }
  }
}

}  // TEST_SUITE
