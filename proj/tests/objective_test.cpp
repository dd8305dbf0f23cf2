#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "relic/grad_check.hpp"
#include "relic/objective.hpp"

using namespace relic;

namespace {

Tensor vec(std::vector<float> v) {
  Tensor t({int(v.size())});
  t.values = std::move(v);
  return t;
}

Tensor mat(int rows, int cols, std::vector<float> v) {
  Tensor t({rows, cols});
  t.values = std::move(v);
  return t;
}

Tensor random_rows(int rows, int cols, RngState& rng) {
  Tensor t({rows, cols});
  for (auto& v : t.values) v = float(rng.uniform() * 2 - 1);
  return t;
}

}  // namespace

TEST_CASE("scaled cosine score on hand cases") {
  CHECK(score(vec({1, 0}), vec({1, 0}), 2.0) == doctest::Approx(2.0));
  CHECK(score(vec({1, 0}), vec({0, 1}), 5.0) == doctest::Approx(0.0));
  CHECK(score(vec({1, 1}), vec({1, 0}), 1.0) == doctest::Approx(0.70711).epsilon(1e-4));
  CHECK_THROWS_AS(score(vec({0, 0}), vec({1, 0}), 1.0), std::runtime_error);
}

TEST_CASE("full softmax probability over the whole table") {
  // two entities with equal scores
  Tensor table = mat(2, 2, {1, 0, 1, 0});
  CHECK(full_softmax_prob(vec({1, 0}), table, 1.0, 0) == doctest::Approx(0.5));

  // N equal entities
  Tensor table8 = mat(8, 2, std::vector<float>(16));
  for (int i = 0; i < 8; ++i) table8.at(i, 0) = 2.0f;
  CHECK(full_softmax_prob(vec({3, 0}), table8, 4.0, 3) == doctest::Approx(1.0 / 8));

  // scores (2, 0, 0): p = e^2 / (e^2 + 2)
  Tensor table3 = mat(3, 2, {1, 0, 0, 1, 0, -1});
  const double p = full_softmax_prob(vec({1, 0}), table3, 2.0, 0);
  CHECK(p == doctest::Approx(std::exp(2.0) / (std::exp(2.0) + 2.0)).epsilon(1e-6));
  CHECK(p == doctest::Approx(0.78699).epsilon(1e-4));
}

TEST_CASE("batch score matrix basics and duplicate masking") {
  // orthonormal rows, a = 1: identity matrix
  Tensor g = mat(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  ScoreMatrix sm = batch_score_matrix(g, g, 1.0);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(sm.scores.at(i, j) == doctest::Approx(i == j ? 1.0 : 0.0));

  // rows 0 and 2 share an entity: cells (0,2) and (2,0) masked
  ScoreMatrix dup = batch_score_matrix(g, g, 1.0, {5, 6, 5});
  CHECK(dup.masked(0, 2));
  CHECK(dup.masked(2, 0));
  CHECK_FALSE(dup.masked(0, 0));
  CHECK_FALSE(dup.masked(0, 1));

  // B = 1: single class, loss 0
  Tensor g1 = mat(1, 2, {1, 1});
  ScoreMatrix one = batch_score_matrix(g1, g1, 3.0);
  CHECK(nce_loss(one) == doctest::Approx(0.0));
}

TEST_CASE("nce loss on hand cases") {
  // four equal scores: ln 4
  ScoreMatrix sm;
  sm.scores = mat(1, 4, {1.5, 1.5, 1.5, 1.5});
  sm.true_col = {0};
  sm.dup_mask.assign(4, 0);
  CHECK(nce_loss(sm) == doctest::Approx(std::log(4.0)).epsilon(1e-6));
  CHECK(nce_loss(sm) == doctest::Approx(1.38629).epsilon(1e-4));

  // scores (2, 0, 0), true 0
  sm.scores = mat(1, 3, {2, 0, 0});
  sm.dup_mask.assign(3, 0);
  CHECK(nce_loss(sm) == doctest::Approx(0.23954).epsilon(1e-4));

  // gradient rows: softmax - one_hot, scaled by 1/B
  Tensor ds;
  nce_loss(sm, &ds);
  const double denom = std::exp(2.0) + 2.0;
  CHECK(ds.at(0, 0) == doctest::Approx(std::exp(2.0) / denom - 1.0).epsilon(1e-5));
  CHECK(ds.at(0, 1) == doctest::Approx(1.0 / denom).epsilon(1e-5));
}

TEST_CASE("nce loss rejects matrices whose true cell is masked") {
  ScoreMatrix sm;
  sm.scores = mat(1, 3, {1, 2, 3});
  sm.true_col = {1};
  sm.dup_mask = {0, 1, 0};
  CHECK_THROWS_AS(nce_loss(sm), std::invalid_argument);
}

TEST_CASE("score matrices reject zero rows for either metric") {
  Tensor g = mat(2, 2, {1, 0, 0, 0});  // second row zero
  CHECK_THROWS_AS(batch_score_matrix(g, g, 1.0, {}, static_cast<CosineCache<float>*>(nullptr),
                                     Metric::kDot),
                  std::runtime_error);
}

TEST_CASE("nce loss is nonnegative and shift invariant") {
  RngState rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const int b = 2 + int(rng.below(5));
    ScoreMatrix sm;
    sm.scores = random_rows(b, b, rng);
    for (auto& v : sm.scores.values) v *= 5;
    sm.true_col.resize(size_t(b));
    for (int i = 0; i < b; ++i) sm.true_col[size_t(i)] = i;
    sm.dup_mask.assign(size_t(b) * b, 0);
    const double loss = nce_loss(sm);
    CHECK(loss >= 0.0);
    ScoreMatrix shifted = sm;
    const float c = float(trial) * 0.37f - 5.0f;
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < b; ++j) shifted.scores.at(i, j) += c;
    CHECK(std::fabs(nce_loss(shifted) - loss) < 1e-6);
  }
}

TEST_CASE("nce with all other entities as negatives equals full softmax") {
  RngState rng(33);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 10 + int(rng.below(990));
    const int d = 4;
    Tensor table = random_rows(n, d, rng);
    Tensor q = random_rows(1, d, rng);
    const double a = 7.0;
    const int target = int(rng.below(uint64_t(n)));

    // negatives enumerate every other entity; gold in its own column
    ScoreMatrix sm;
    sm.scores = Tensor({1, n});
    sm.true_col = {target};
    sm.dup_mask.assign(size_t(n), 0);
    for (int j = 0; j < n; ++j) {
      Tensor row({d});
      std::copy_n(table.data() + size_t(j) * d, d, row.values.begin());
      sm.scores.at(0, j) = float(score(q, row, a));
    }
    const double loss = nce_loss(sm);
    const double reference = -std::log(full_softmax_prob(q, table, a, target));
    CHECK(std::fabs(loss - reference) < 1e-6);
  }
}

TEST_CASE("in batch metrics ranks with documented tie breaking") {
  ScoreMatrix sm;
  sm.scores = mat(4, 4, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
  sm.true_col = {0, 1, 2, 3};
  sm.dup_mask.assign(16, 0);
  auto [rank, acc] = in_batch_metrics(sm);
  CHECK(rank == doctest::Approx(1.0));
  CHECK(acc == doctest::Approx(1.0));

  // row scores (0, 1, 2), true 0: rank 3
  ScoreMatrix row;
  row.scores = mat(1, 3, {0, 1, 2});
  row.true_col = {0};
  row.dup_mask.assign(3, 0);
  CHECK(in_batch_metrics(row).first == doctest::Approx(3.0));

  // all-equal scores, true column 0: rank 1 by the tie rule (lower index wins)
  ScoreMatrix ties;
  ties.scores = mat(3, 3, std::vector<float>(9, 0.5f));
  ties.true_col = {0, 0, 0};
  ties.dup_mask.assign(9, 0);
  auto [tie_rank, tie_acc] = in_batch_metrics(ties);
  CHECK(tie_rank == doctest::Approx(1.0));
  CHECK(tie_acc == doctest::Approx(1.0));

  // true column 2 with equal scores: both lower columns outrank it
  ScoreMatrix ties2;
  ties2.scores = mat(1, 3, {0.5f, 0.5f, 0.5f});
  ties2.true_col = {2};
  ties2.dup_mask.assign(3, 0);
  CHECK(in_batch_metrics(ties2).first == doctest::Approx(3.0));
}

TEST_CASE("entity rescaling never changes scores, loss or ranking") {
  RngState rng(37);
  const int b = 6, d = 8;
  Tensor g = random_rows(b, d, rng);
  Tensor f = random_rows(b, d, rng);
  ScoreMatrix sm = batch_score_matrix(g, f, 9.0);
  Tensor f_scaled = f;
  for (auto& v : f_scaled.values) v *= 3.7f;
  ScoreMatrix sm2 = batch_score_matrix(g, f_scaled, 9.0);
  for (size_t i = 0; i < sm.scores.values.size(); ++i)
    CHECK(std::fabs(sm.scores.values[i] - sm2.scores.values[i]) < 1e-5);
  CHECK(std::fabs(nce_loss(sm) - nce_loss(sm2)) < 1e-5);
  CHECK(in_batch_metrics(sm) == in_batch_metrics(sm2));
}

TEST_CASE("nce gradient through scoring matches finite differences") {
  RngState rng(41);
  const int b = 4, d = 6;
  DTensor g({b, d}), f({b, d});
  for (auto& v : g.values) v = rng.uniform() * 2 - 1;
  for (auto& v : f.values) v = rng.uniform() * 2 - 1;
  DTensor a_t({1});
  a_t.values[0] = 5.0;
  std::vector<int> ids = {1, 2, 1, 3};  // includes a duplicate pair

  auto loss = [&] {
    ScoreMatrixT<double> sm = batch_score_matrix(g, f, a_t.values[0], ids);
    return nce_loss(sm);
  };
  CosineCache<double> cache;
  ScoreMatrixT<double> sm = batch_score_matrix(g, f, a_t.values[0], ids, &cache);
  DTensor ds;
  nce_loss(sm, &ds);
  DTensor dg, df;
  double da = 0;
  cosine_score_backward(g, f, a_t.values[0], cache, ds, dg, df, da);
  g.grad = dg.values;
  f.grad = df.values;
  a_t.grad = {da};
  RngState cr(42);
  auto report = grad_check<double>(loss, {&g, &f, &a_t}, 1e-6, cr, 150);
  CHECK(report.max_rel_err < 1e-3);
}

TEST_CASE("rowwise explicit-negative scoring matches the batch path semantics") {
  RngState rng(43);
  const int b = 3, k1 = 4, d = 5;
  DTensor g({b, d}), f({b * k1, d});
  for (auto& v : g.values) v = rng.uniform() * 2 - 1;
  for (auto& v : f.values) v = rng.uniform() * 2 - 1;
  auto loss = [&] {
    ScoreMatrixT<double> sm = rowwise_score_matrix(g, f, k1, 3.0);
    return nce_loss(sm);
  };
  CosineCache<double> cache;
  ScoreMatrixT<double> sm = rowwise_score_matrix(g, f, k1, 3.0, &cache);
  CHECK(sm.cols() == k1);
  for (int i = 0; i < b; ++i) {
    DTensor gi({d}), fi({d});
    std::copy_n(g.data() + size_t(i) * d, d, gi.values.begin());
    std::copy_n(f.data() + size_t(i) * size_t(k1) * d, d, fi.values.begin());
    CHECK(sm.scores.at(i, 0) == doctest::Approx(score(gi, fi, 3.0)).epsilon(1e-9));
  }
  DTensor ds;
  nce_loss(sm, &ds);
  DTensor dg, df;
  double da = 0;
  rowwise_score_backward(g, f, 3.0, cache, ds, dg, df, da);
  g.grad = dg.values;
  f.grad = df.values;
  RngState cr(44);
  auto report = grad_check<double>(loss, {&g, &f}, 1e-6, cr, 120);
  CHECK(report.max_rel_err < 1e-3);
}

TEST_CASE("noise negatives follow the frequency distribution") {
  RngState rng(47);
  std::vector<double> freqs = {1, 1, 1, 1};
  auto draws = sample_noise_negatives(freqs, 10000, rng);
  std::vector<int> counts(4, 0);
  for (int v : draws) ++counts[size_t(v)];
  for (int c : counts) CHECK(std::fabs(c / 10000.0 - 0.25) < 0.03);

  // degenerate distribution always lands on the supported entity
  auto fixed = sample_noise_negatives({1, 0, 0}, 100, rng);
  for (int v : fixed) CHECK(v == 0);

  RngState r1(7), r2(7);
  CHECK(sample_noise_negatives({2, 3, 5}, 50, r1) == sample_noise_negatives({2, 3, 5}, 50, r2));
}
