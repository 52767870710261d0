#include <Eigen/QR>

#include <algorithm>
#include <cstring>
#include <numeric>

#include "doctest.h"
#include "gtp/pursuit.hpp"
#include "gtp/rng.hpp"
#include "gtp/synth.hpp"

using namespace gtp;

namespace {

// Columns (e1, e1, e2) in R^2, b = 2 e1 + e2.
DesignSystem duplicate_example() {
  Matrix a(2, 3);
  a << 1, 1, 0,
       0, 0, 1;
  Vector b(2);
  b << 2, 1;
  return make_design(a, b);
}

PursuitConfig config(Index budget, Index iterations) {
  PursuitConfig c;
  c.budget = budget;
  c.iterations = iterations;
  return c;
}

}  // namespace

TEST_CASE("duplicate example: gtp keeps one copy and fits exactly") {
  const auto d = duplicate_example();
  const auto sel = iter_cosamp(d, config(2, 1));
  CHECK(sel.indices == IndexList{0, 2});
  CHECK(sel.weights(0) == doctest::Approx(2.0));
  CHECK(sel.weights(1) == doctest::Approx(1.0));
  CHECK(sel.final_residual < 1e-12);

  const auto best = brute_force_best_subset(d, 2);
  CHECK(best.indices == sel.indices);
  CHECK(best.residual < 1e-12);
}

TEST_CASE("duplicate example: top-k takes both copies") {
  const auto sel = top_k_select(duplicate_example(), 2);
  CHECK(sel.indices == IndexList{0, 1});
  CHECK(sel.final_residual == doctest::Approx(1.0));
  CHECK(sel.residual_history.size() == 1);
}

TEST_CASE("duplicate example: omp skips the second copy") {
  const auto sel = omp_select(duplicate_example(), 2);
  CHECK(sel.indices == IndexList{0, 2});
  CHECK(sel.final_residual < 1e-12);
  CHECK(sel.residual_history.size() == 3);
}

TEST_CASE("budget one with unit columns reduces to top-1") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto inst = gen_sparse_instance(40, 10, 3, 0.1, seed);
    const Vector p = inst.design.a.transpose() * inst.design.b;
    Index best = 0;
    p.maxCoeff(&best);
    const auto sel = iter_cosamp(inst.design, config(1, 1));
    CHECK(sel.indices == IndexList{best});
    CHECK(omp_select(inst.design, 1).indices == sel.indices);
    CHECK(top_k_select(inst.design, 1).indices == sel.indices);
  }
}

TEST_CASE("planted 16-sparse support is recovered") {
  const auto inst = gen_sparse_instance(2048, 256, 16, 0.0, 1000);
  const auto sel = iter_cosamp(inst.design, config(16, 10));
  CHECK(sel.indices == inst.support);
  for (std::size_t i = 0; i < sel.indices.size(); ++i) {
    CHECK(std::abs(sel.weights(static_cast<Index>(i)) - inst.true_weights(sel.indices[i])) < 1e-6);
  }
  CHECK(sel.residual_history.size() == 11);
  CHECK(sel.residual_history.front() == doctest::Approx(inst.design.b.norm()));
  CHECK(sel.per_iteration_supports.size() == 10);
}

TEST_CASE("selection invariants hold and residual history is reproducible") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto inst = gen_sparse_instance(120, 30, 8, 0.2, 50 + seed);
    const auto sel = iter_cosamp(inst.design, config(6, 4));
    IndexList sorted = sel.indices;
    std::sort(sorted.begin(), sorted.end());
    CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
    CHECK(sel.indices.size() == 6);
    CHECK((sel.weights.array() >= 0.0).all());
    for (std::size_t k = 0; k < sel.per_iteration_supports.size(); ++k) {
      const double r = compute_residual(inst.design, sel.per_iteration_supports[k], sel.per_iteration_weights[k]);
      CHECK(std::abs(r - sel.residual_history[k + 1]) <= 1e-9 * std::max(1.0, r));
    }
    CHECK(compute_residual(inst.design, sel.indices, sel.weights) == doctest::Approx(sel.final_residual));
  }
}

TEST_CASE("thread count does not change the selection") {
  const auto inst = gen_sparse_instance(3000, 64, 10, 0.1, 77);
  auto c = config(10, 5);
  const auto one = iter_cosamp(inst.design, c);
  c.n_threads = 4;
  const auto four = iter_cosamp(inst.design, c);
  CHECK(one.indices == four.indices);
  CHECK(std::memcmp(one.weights.data(), four.weights.data(), sizeof(double) * 10) == 0);
  CHECK(one.residual_history == four.residual_history);
  CHECK(correlate(inst.design.a, inst.design.b, 1) == correlate(inst.design.a, inst.design.b, 3));
}

TEST_CASE("correlate matches the matrix product") {
  Rng rng(5);
  const Matrix a = gaussian_matrix(rng, 37, 11);
  const Vector c = gaussian_matrix(rng, 37, 1).col(0);
  CHECK((correlate(a, c) - a.transpose() * c).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("top indices break ties toward the lower index") {
  Vector s(6);
  s << 1, 3, 3, -1, 3, 0;
  CHECK(top_indices(s, 2) == IndexList{1, 2});
  CHECK(top_indices(s, 4) == IndexList{1, 2, 4, 0});
}

TEST_CASE("candidate pool unites the previous support and sorts") {
  Vector p(6);
  p << 0.1, 5, 0.2, 4, 0.3, 0.0;
  CHECK(candidate_pool(p, 2, IndexList{5, 0}) == IndexList{0, 1, 3, 5});
}

TEST_CASE("prune pads with correlation when too few weights are positive") {
  const IndexList pool{1, 3, 4};
  Vector w(3);
  w << 0.0, 2.0, 0.0;
  Vector p(6);
  p << 0, 1, 0, 5, 7, 9;
  bool padded = false;
  const auto s = prune_support(pool, w, p, 3, &padded);
  CHECK(padded);
  CHECK(s == IndexList{3, 4, 5});
}

TEST_CASE("pool is clamped when 2M exceeds N") {
  const auto inst = gen_sparse_instance(10, 8, 3, 0.0, 3);
  const auto sel = iter_cosamp(inst.design, config(6, 2));
  CHECK(sel.pool_clamped);
  CHECK(sel.indices.size() == 6);
}

TEST_CASE("target literal mode keeps the contract") {
  const auto inst = gen_sparse_instance(200, 40, 5, 0.05, 9);
  auto c = config(5, 4);
  c.correlation_mode = CorrelationMode::target_literal;
  const auto sel = iter_cosamp(inst.design, c);
  CHECK(sel.residual_history.size() == 5);
  CHECK(sel.indices.size() == 5);
  CHECK(parse_correlation_mode("target_literal") == CorrelationMode::target_literal);
  CHECK_THROWS_AS(parse_correlation_mode("other"), ValidationError);
}

TEST_CASE("early exit stops once the residual settles") {
  const auto inst = gen_sparse_instance(300, 80, 5, 0.0, 10);
  auto c = config(5, 10);
  c.early_exit = true;
  const auto sel = iter_cosamp(inst.design, c);
  CHECK(sel.residual_history.size() < 11);
  CHECK(sel.indices == inst.support);
}

TEST_CASE("invalid budgets and iteration counts are rejected") {
  const auto d = duplicate_example();
  CHECK_THROWS_AS(iter_cosamp(d, config(0, 1)), ValidationError);
  CHECK_THROWS_AS(iter_cosamp(d, config(4, 1)), ValidationError);
  CHECK_THROWS_AS(iter_cosamp(d, config(1, 0)), ValidationError);
  CHECK_THROWS_AS(top_k_select(d, 4), ValidationError);
  CHECK_THROWS_AS(omp_select(d, 0), ValidationError);
  CHECK_THROWS_AS(random_select(d, 4, 1), ValidationError);
}

TEST_CASE("top-k edge cases") {
  const auto inst = gen_sparse_instance(15, 6, 2, 0.0, 11);
  auto all = top_k_select(inst.design, 15).indices;
  std::sort(all.begin(), all.end());
  IndexList expected(15);
  std::iota(expected.begin(), expected.end(), 0);
  CHECK(all == expected);

  auto zero = inst.design;
  zero.b.setZero();
  CHECK(top_k_select(zero, 4).indices == IndexList{0, 1, 2, 3});
}

TEST_CASE("omp recovers non-negative combinations of orthonormal columns") {
  Rng rng(12);
  Matrix q = Eigen::HouseholderQR<Matrix>(gaussian_matrix(rng, 20, 8)).householderQ() * Matrix::Identity(20, 8);
  Vector w = Vector::Zero(8);
  w(1) = 3;
  w(4) = 2;
  w(6) = 1;
  const auto sel = omp_select(make_design(q, q * w), 3);
  CHECK(sel.indices == IndexList{1, 4, 6});
  CHECK((sel.weights - Vector::LinSpaced(3, 3, 1)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("omp residual history is non-increasing") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto inst = gen_sparse_instance(150, 30, 10, 0.3, 20 + seed);
    const auto sel = omp_select(inst.design, 12);
    REQUIRE(sel.residual_history.size() == 13);
    for (std::size_t k = 1; k < sel.residual_history.size(); ++k) {
      CHECK(sel.residual_history[k] <= sel.residual_history[k - 1] + 1e-9);
    }
  }
}

TEST_CASE("random baseline is seeded") {
  CHECK(random_indices(1000, 10, 1) == random_indices(1000, 10, 1));
  CHECK(random_indices(1000, 10, 1) != random_indices(1000, 10, 2));
  auto perm = random_indices(25, 25, 3);
  std::sort(perm.begin(), perm.end());
  IndexList all(25);
  std::iota(all.begin(), all.end(), 0);
  CHECK(perm == all);

  const auto inst = gen_sparse_instance(50, 10, 3, 0.0, 4);
  const auto sel = random_select(inst.design, 5, 7);
  CHECK(sel.indices == random_indices(50, 5, 7));
  CHECK(sel.algorithm == "random");
  CHECK((sel.weights.array() >= 0.0).all());
}

TEST_CASE("compute residual examples") {
  const auto inst = gen_sparse_instance(60, 20, 4, 0.0, 5);
  CHECK(compute_residual(inst.design, {}, Vector()) == doctest::Approx(inst.design.b.norm()));
  Vector w(4);
  for (Index i = 0; i < 4; ++i) w(i) = inst.true_weights(inst.support[static_cast<std::size_t>(i)]);
  CHECK(compute_residual(inst.design, inst.support, w) < 1e-9);
  CHECK_THROWS_AS(compute_residual(inst.design, IndexList{60}, Vector::Ones(1)), ValidationError);
}

TEST_CASE("duplicate groups are never selected twice by gtp") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto inst = gen_duplicated_instance(120, 40, 3, 5, 30 + seed);
    const auto sel = iter_cosamp(inst.design, config(3, 10));
    for (const auto& g : inst.groups) {
      int hits = 0;
      for (Index i : sel.indices) hits += std::binary_search(g.begin(), g.end(), i) ? 1 : 0;
      CHECK(hits == 1);
    }
  }
}
