#include <doctest.h>

#include <cmath>
#include <vector>

#include "reprompt/adapter.hpp"
#include "reprompt/ops.hpp"
#include "reprompt/rng.hpp"

using namespace reprompt;

namespace {
RetrievalDatabase three_entry_db() {
  double s = 1.0 / std::sqrt(2.0);
  Tensor features({3, 2}, {1.0, 0.0, 0.0, 1.0, s, s});
  return RetrievalDatabase::build(features, {0, 1, 0}, 2, 0, 1);
}

RetrievalDatabase one_per_class_db(std::size_t classes, std::size_t dim) {
  Tensor features({classes, dim});
  std::vector<std::uint32_t> labels(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    features[c * dim + c] = 1.0;  // orthogonal one-hot keys
    labels[c] = static_cast<std::uint32_t>(c);
  }
  return RetrievalDatabase::build(features, labels, static_cast<std::uint32_t>(classes), 0, 1);
}
}  // namespace

TEST_CASE("adapter initialization copies keys and builds exact one-hot labels") {
  RetrievalDatabase db = three_entry_db();
  AdapterState adapter = AdapterState::init(db, 16.0, 0.5, false);
  CHECK(adapter.entries() == 3);
  CHECK(adapter.classes() == 2);
  CHECK(adapter.cache_keys.requires_grad());
  for (std::size_t i = 0; i < 3; ++i) {
    double row_sum = 0.0;
    for (std::size_t c = 0; c < 2; ++c) row_sum += adapter.label_onehot.at(i, c);
    CHECK(row_sum == 1.0);
  }
  CHECK(adapter.label_onehot.at(0, 0) == 1.0);
  CHECK(adapter.label_onehot.at(1, 1) == 1.0);
  CHECK(adapter.label_onehot.at(2, 0) == 1.0);

  AdapterState frozen = AdapterState::init(db, 16.0, 0.5, true);
  CHECK(!frozen.cache_keys.requires_grad());

  CHECK_THROWS(AdapterState::init(db, 0.0, 0.5, false));
  CHECK_THROWS(AdapterState::init(db, 16.0, 1.5, false));
}

TEST_CASE("knn_probability matches the enumerated three-entry case") {
  RetrievalDatabase db = three_entry_db();
  AdapterState adapter = AdapterState::init(db, 1.0, 0.5, false);
  Tensor z = Tensor::vector({1.0, 0.0});
  Tensor p = knn_probability(adapter, z);
  double s = 1.0 / std::sqrt(2.0);
  double denom = std::exp(1.0) + std::exp(0.0) + std::exp(s);
  CHECK(p[0] == doctest::Approx((std::exp(1.0) + std::exp(s)) / denom).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(std::exp(0.0) / denom).epsilon(1e-12));
  CHECK(p[0] == doctest::Approx(0.8260).epsilon(1e-4));
  CHECK(p[1] == doctest::Approx(0.1740).epsilon(1e-4));
}

TEST_CASE("knn_probability sharpens to one-hot at high temperature") {
  RetrievalDatabase db = one_per_class_db(4, 4);
  AdapterState adapter = AdapterState::init(db, 200.0, 0.5, false);
  Tensor z = Tensor::vector({0.0, 0.0, 1.0, 0.0});
  Tensor p = knn_probability(adapter, z);
  CHECK(p[2] == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("equal similarities yield class-count proportions") {
  // four identical keys, labels 0,0,0,1
  Tensor features({4, 2}, {1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0});
  RetrievalDatabase db = RetrievalDatabase::build(features, {0, 0, 0, 1}, 2, 0, 2);
  AdapterState adapter = AdapterState::init(db, 7.0, 0.5, false);
  Tensor z = Tensor::vector({0.0, 1.0});
  Tensor p = knn_probability(adapter, z);
  CHECK(p[0] == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("knn_probability is a distribution for random queries and temperatures") {
  RngStream rng(31, 0);
  Tensor features({20, 6});
  std::vector<std::uint32_t> labels(20);
  for (std::size_t i = 0; i < 20; ++i) {
    Tensor row = ops::l2_normalize(rng.normal_tensor({6}, 1.0));
    std::copy(row.data(), row.data() + 6, features.data() + i * 6);
    labels[i] = static_cast<std::uint32_t>(i % 5);
  }
  RetrievalDatabase db = RetrievalDatabase::build(features, labels, 5, 0, 4);
  for (double tau : {0.5, 4.0, 16.0, 64.0}) {
    AdapterState adapter = AdapterState::init(db, tau, 0.5, false);
    Tensor z = ops::l2_normalize(rng.normal_tensor({6}, 1.0));
    Tensor p = knn_probability(adapter, z);
    double sum = 0.0;
    for (std::size_t c = 0; c < 5; ++c) {
      CHECK(p[c] >= 0.0);
      sum += p[c];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("dominance: a matching key with margin takes at least 0.99 at tau 30") {
  // one key per class; query equals class-2 key; other sims <= 0.9
  std::size_t dim = 8;
  Tensor features({4, dim});
  std::vector<std::uint32_t> labels{0, 1, 2, 3};
  RngStream rng(32, 0);
  Tensor target = ops::l2_normalize(rng.normal_tensor({dim}, 1.0));
  for (std::size_t c = 0; c < 4; ++c) {
    if (c == 2) {
      std::copy(target.data(), target.data() + dim, features.data() + c * dim);
    } else {
      // orthogonalized noise keeps similarity to the target below 0.9
      Tensor v = ops::l2_normalize(rng.normal_tensor({dim}, 1.0));
      double proj = ops::dot(v.data(), target.data(), dim);
      for (std::size_t i = 0; i < dim; ++i) v[i] -= proj * target[i];
      Tensor u = ops::l2_normalize(v);
      for (std::size_t i = 0; i < dim; ++i) {
        features[c * dim + i] = 0.5 * target[i] + std::sqrt(1 - 0.25) * u[i];
      }
    }
  }
  RetrievalDatabase db = RetrievalDatabase::build(features, labels, 4, 0, 1);
  AdapterState adapter = AdapterState::init(db, 30.0, 0.5, false);
  Tensor p = knn_probability(adapter, target);
  CHECK(p[2] >= 0.99);
}

TEST_CASE("adapter gradients flow to query and unfrozen keys") {
  RetrievalDatabase db = three_entry_db();
  AdapterState adapter = AdapterState::init(db, 4.0, 0.5, false);
  Tensor z = ops::l2_normalize(Tensor::vector({0.8, 0.6}));
  z.set_requires_grad(true);

  std::vector<Tensor*> params{&adapter.cache_keys, &z};
  auto fn = [&](bool with_grad) {
    Tape tape;
    Tape::NodeId p = knn_probability(tape, adapter, tape.leaf(z));
    Tape::NodeId loss = tape.neg_log(tape.pick(p, 0));
    double v = tape.value(loss).item();
    if (with_grad) tape.backward(loss);
    return v;
  };
  CHECK(grad_check(fn, params, 1e-5) < 1e-7);
}

TEST_CASE("frozen keys receive no gradient and keep their bytes") {
  RetrievalDatabase db = three_entry_db();
  AdapterState adapter = AdapterState::init(db, 4.0, 0.5, true);
  Tensor before = adapter.cache_keys;
  Tensor z = ops::l2_normalize(Tensor::vector({0.8, 0.6}));

  Tape tape;
  Tape::NodeId p = knn_probability(tape, adapter, tape.constant(z));
  tape.backward(tape.neg_log(tape.pick(p, 0)));
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(adapter.cache_keys[i] == before[i]);
}

TEST_CASE("adapter top-k cutoff restricts aggregation to nearest keys") {
  RetrievalDatabase db = one_per_class_db(4, 4);
  AdapterState adapter = AdapterState::init(db, 2.0, 0.5, false, 2);
  Tensor z = ops::l2_normalize(Tensor::vector({0.9, 0.3, 0.0, 0.0}));
  Tensor p = knn_probability(adapter, z);
  // only the two nearest keys (classes 0 and 1) hold mass
  CHECK(p[0] > 0.0);
  CHECK(p[1] > 0.0);
  CHECK(p[2] == 0.0);
  CHECK(p[3] == 0.0);
  double sum = p[0] + p[1] + p[2] + p[3];
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("interpolate limits, hand case, and monotonicity") {
  Tensor pk = Tensor::vector({0.8, 0.2});
  Tensor pp = Tensor::vector({0.6, 0.4});

  Tensor at0 = interpolate(pk, pp, 0.0);
  CHECK(at0[0] == pp[0]);
  CHECK(at0[1] == pp[1]);

  Tensor at1 = interpolate(pk, pp, 1.0);
  CHECK(at1[0] == pk[0]);
  CHECK(at1[1] == pk[1]);

  Tensor mid = interpolate(pk, pp, 0.5);
  CHECK(mid[0] == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(mid[1] == doctest::Approx(0.3).epsilon(1e-15));

  CHECK_THROWS(interpolate(pk, pp, -0.1));
  CHECK_THROWS(interpolate(pk, pp, 1.1));
  CHECK_THROWS(interpolate(pk, Tensor::vector({1.0}), 0.5));

  double prev = at0[0];
  for (double lambda : {0.25, 0.5, 0.75, 1.0}) {
    Tensor p = interpolate(pk, pp, lambda);
    CHECK(p[0] >= prev);  // monotone toward p_knn per class
    CHECK(p[0] + p[1] == doctest::Approx(1.0).epsilon(1e-12));
    prev = p[0];
  }
}
