#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "support.hpp"
#include "vidloop/errors.hpp"
#include "vidloop/retrieval.hpp"

using namespace vidloop;
using testing::mmr_instance;
using testing::store_with_query_sims;

namespace {

// Straight-line MMR objective, independent of the library's evaluation.
double mmr_reference(const EmbeddingStore& store, const std::vector<std::size_t>& subset,
                     const SearchState& q, double lambda) {
  double total = 0.0;
  for (std::size_t i : subset) {
    double rel = 0.0;
    for (std::size_t k = 0; k < store.dim(); ++k) rel += store.row(i)[k] * q.embedding[k];
    double worst = 0.0;
    bool any = false;
    for (std::size_t j : subset) {
      if (j == i) continue;
      double sim = 0.0;
      for (std::size_t k = 0; k < store.dim(); ++k) sim += store.row(i)[k] * store.row(j)[k];
      worst = any ? std::max(worst, sim) : sim;
      any = true;
    }
    total += lambda * rel - (1.0 - lambda) * worst;
  }
  return total;
}

bool is_sorted_unique(const std::vector<std::size_t>& v) {
  return std::adjacent_find(v.begin(), v.end(), std::greater_equal<>()) == v.end();
}

}  // namespace

TEST_CASE("cosine similarity") {
  const auto s = EmbeddingStore::from_rows({{1.0, 0.0}, {3.0, 4.0}});
  CHECK(cosine_sim(s, 0, SearchState::make("", std::vector<double>{1.0, 0.0})) == 1.0);
  CHECK(cosine_sim(s, 0, SearchState::make("", std::vector<double>{0.0, 1.0})) == 0.0);
  CHECK(cosine_sim(s, 1, SearchState::make("", std::vector<double>{4.0, 3.0})) ==
        doctest::Approx(0.96).epsilon(1e-7));
  CHECK_THROWS_AS(cosine_sim(s, 2, SearchState::make("", std::vector<double>{1.0, 0.0})),
                  BoundsError);
}

TEST_CASE("policy distribution") {
  SUBCASE("two-frame softmax") {
    auto [store, q] = store_with_query_sims({1.0, 0.0});
    const auto p = policy_distribution(store, all_frames(store), q, {});
    CHECK(p[0] == doctest::Approx(0.73106).epsilon(1e-4));
    CHECK(p[1] == doctest::Approx(0.26894).epsilon(1e-4));
  }
  SUBCASE("equidistant frames are uniform") {
    auto [store, q] = store_with_query_sims({0.3, 0.3, 0.3, 0.3, 0.3});
    for (double pi : policy_distribution(store, all_frames(store), q, {})) {
      CHECK(pi == doctest::Approx(0.2).epsilon(1e-7));
    }
  }
  SUBCASE("low temperature concentrates on the argmax") {
    auto [store, q] = store_with_query_sims({0.2, 0.7, 0.5});
    RetrievalConfig cfg;
    cfg.softmax_temperature = 1e-6;
    CHECK(policy_distribution(store, all_frames(store), q, cfg)[1] >= 1.0 - 1e-6);
  }
  SUBCASE("empty pool") {
    auto [store, q] = store_with_query_sims({0.2});
    CHECK_THROWS_AS(policy_distribution(store, std::vector<std::size_t>{}, q, {}), ValidationError);
  }
}

TEST_CASE("softmax sums to one and is shift-invariant") {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> logits(1 + trial % 40);
    for (double& x : logits) x = u(rng);
    const double tau = 0.05 + (u(rng) + 1.0);
    const auto p = softmax(logits, tau);
    CHECK(std::accumulate(p.begin(), p.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    std::vector<double> shifted = logits;
    const double c = 3.0 * u(rng);
    for (double& x : shifted) x += c;
    const auto q = softmax(shifted, tau);
    for (std::size_t k = 0; k < p.size(); ++k) CHECK(std::abs(p[k] - q[k]) <= 1e-12);
  }
}

TEST_CASE("expand_top_m") {
  auto [store, q] = store_with_query_sims({0.9, 0.2, 0.8, 0.5});
  const WorkingSet start{{0}, 1};

  const auto grown = expand_top_m(store, start, q, 3);
  CHECK(grown.indices == std::vector<std::size_t>{0, 2, 3});
  CHECK(grown.target == 3);
  CHECK(expand_top_m(store, start, q, 1).indices == start.indices);
  CHECK_THROWS_AS(expand_top_m(store, start, q, 5), ValidationError);

  auto [tied, tq] = store_with_query_sims({0.9, 0.5, 0.5, 0.1});
  CHECK(expand_top_m(tied, WorkingSet{{0}, 1}, tq, 2).indices == std::vector<std::size_t>{0, 1});
}

TEST_CASE("expand and shrink preserve set structure") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto store = testing::random_store(20, 6, seed);
    std::mt19937_64 rng(seed);
    const auto q = SearchState::make("q", testing::random_unit(6, rng));
    RetrievalConfig cfg;
    cfg.stochastic = seed % 2 == 1;
    cfg.rng_seed = seed;
    const auto w4 = expand_top_m(store, {}, q, 4, cfg);
    const auto w12 = expand_top_m(store, w4, q, 12, cfg);
    CHECK(w4.size() == 4);
    CHECK(w12.size() == 12);
    CHECK(is_sorted_unique(w12.indices));
    for (std::size_t i : w4.indices) CHECK(w12.contains(i));
    validate_working_set(store, w12);

    const auto w5 = shrink_mmr_greedy(store, w12, q, 5, 0.5);
    CHECK(w5.size() == 5);
    CHECK(is_sorted_unique(w5.indices));
    for (std::size_t i : w5.indices) CHECK(w12.contains(i));
  }
}

TEST_CASE("retrieval is deterministic and seeded sampling reproducible") {
  const auto store = testing::random_store(30, 8, 9);
  std::mt19937_64 rng(1);
  const auto q = SearchState::make("q", testing::random_unit(8, rng));
  CHECK(expand_top_m(store, {}, q, 10).indices == expand_top_m(store, {}, q, 10).indices);
  RetrievalConfig cfg;
  cfg.stochastic = true;
  cfg.rng_seed = 77;
  CHECK(expand_top_m(store, {}, q, 10, cfg).indices == expand_top_m(store, {}, q, 10, cfg).indices);
  const WorkingSet full{all_frames(store), 30};
  CHECK(shrink_mmr_greedy(store, full, q, 7, 0.5).indices ==
        shrink_mmr_greedy(store, full, q, 7, 0.5).indices);
}

TEST_CASE("low-temperature sampling matches deterministic top-m") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto store = testing::random_store(16, 8, 1000 + seed);
    std::mt19937_64 rng(seed);
    const auto q = SearchState::make("q", testing::random_unit(8, rng));
    RetrievalConfig cfg;
    cfg.softmax_temperature = 1e-6;
    cfg.stochastic = true;
    cfg.rng_seed = seed;
    CHECK(expand_top_m(store, WorkingSet{{3}, 1}, q, 6, cfg).indices ==
          expand_top_m(store, WorkingSet{{3}, 1}, q, 6).indices);
  }
}

TEST_CASE("MMR on the three-frame instance") {
  auto [store, q] = mmr_instance();
  const WorkingSet all{{0, 1, 2}, 3};
  CHECK(mmr_objective(store, std::vector<std::size_t>{0, 1}, q, 0.5) ==
        doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(mmr_objective(store, std::vector<std::size_t>{0, 2}, q, 0.5) ==
        doctest::Approx(0.5).epsilon(1e-6));
  CHECK(mmr_objective(store, std::vector<std::size_t>{1, 2}, q, 0.5) ==
        doctest::Approx(0.45).epsilon(1e-6));
  CHECK(mmr_objective(store, std::vector<std::size_t>{0}, q, 0.5) ==
        doctest::Approx(0.45).epsilon(1e-6));

  CHECK(shrink_mmr_greedy(store, all, q, 2, 0.5).indices == std::vector<std::size_t>{0, 2});
  CHECK(shrink_mmr_greedy(store, all, q, 3, 0.5).indices == all.indices);
  CHECK(shrink_mmr_greedy(store, all, q, 1, 0.5).indices == std::vector<std::size_t>{0});
  CHECK_THROWS_AS(shrink_mmr_greedy(store, all, q, 0, 0.5), ValidationError);

  const auto best = mmr_brute_force(store, all.indices, q, 2, 0.5);
  CHECK(best.subset == std::vector<std::size_t>{0, 2});
  CHECK(best.objective == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(mmr_brute_force(store, all.indices, q, 3, 0.5).subset == all.indices);
}

TEST_CASE("brute force breaks total ties lexicographically") {
  // Mutually orthogonal frames, all orthogonal to the query.
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < 5; ++i) rows.push_back(testing::basis(6, i));
  const auto store = EmbeddingStore::from_rows(rows);
  const auto q = SearchState::make("q", testing::basis(6, 5));
  CHECK(mmr_brute_force(store, all_frames(store), q, 3, 0.5).subset ==
        std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("brute force budget") {
  const auto store = testing::random_store(60, 4, 2);
  const auto q = SearchState::make("q", testing::basis(4, 0));
  CHECK_THROWS_AS(mmr_brute_force(store, all_frames(store), q, 30, 0.5), ValidationError);
}

TEST_CASE("greedy never beats the exhaustive optimum") {
  std::mt19937_64 meta(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + meta() % 9;
    const std::size_t k = 1 + meta() % std::min<std::size_t>(4, n);
    const std::size_t dim = 2 + meta() % 6;
    const double lambda = 0.1 * static_cast<double>(meta() % 11);
    const auto store = testing::random_store(n, dim, meta());
    std::mt19937_64 rng(meta());
    const auto q = SearchState::make("q", testing::random_unit(dim, rng));
    const WorkingSet all{all_frames(store), n};

    const auto greedy = shrink_mmr_greedy(store, all, q, k, lambda);
    const auto best = mmr_brute_force(store, all.indices, q, k, lambda);
    CHECK(mmr_objective(store, greedy.indices, q, lambda) <= best.objective + 1e-12);
    CHECK(std::abs(mmr_reference(store, best.subset, q, lambda) - best.objective) <= 1e-12);
    CHECK(std::abs(mmr_reference(store, greedy.indices, q, lambda) -
                   mmr_objective(store, greedy.indices, q, lambda)) <= 1e-12);
  }
}

TEST_CASE("schedules are validated") {
  RetrievalConfig cfg;
  CHECK_NOTHROW(cfg.validate(3));
  CHECK_THROWS_AS(cfg.validate(2), ValidationError);
  cfg.static_schedule = {4, 4, 16};
  CHECK_THROWS_AS(cfg.validate(3), ValidationError);
  cfg.static_schedule = {4, 8, 16};
  cfg.dynamic_schedule = {16, 32};
  CHECK_THROWS_AS(cfg.validate(3), ValidationError);
  cfg.dynamic_schedule = {64, 32, 16};
  cfg.softmax_temperature = 0.0;
  CHECK_THROWS_AS(cfg.validate(3), ValidationError);
}
