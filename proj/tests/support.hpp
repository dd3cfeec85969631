#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "vidloop/store.hpp"

namespace vidloop::testing {

inline std::vector<double> basis(std::size_t dim, std::size_t k) {
  std::vector<double> v(dim, 0.0);
  v[k] = 1.0;
  return v;
}

inline std::vector<double> random_unit(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss;
  std::vector<double> v(dim);
  double sq = 0.0;
  for (double& x : v) {
    x = gauss(rng);
    sq += x * x;
  }
  for (double& x : v) x /= std::sqrt(sq);
  return v;
}

inline EmbeddingStore random_store(std::size_t n, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < n; ++i) rows.push_back(random_unit(dim, rng));
  return EmbeddingStore::from_rows(rows);
}

// Frame i has cosine sims[i] with the query e0 and is otherwise orthogonal
// to the other frames' private axes.
struct QueryStore {
  EmbeddingStore store;
  SearchState query;
};

inline QueryStore store_with_query_sims(const std::vector<double>& sims) {
  const std::size_t dim = sims.size() + 1;
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < sims.size(); ++i) {
    std::vector<double> v(dim, 0.0);
    v[0] = sims[i];
    v[i + 1] = std::sqrt(1.0 - sims[i] * sims[i]);
    rows.push_back(v);
  }
  return {EmbeddingStore::from_rows(rows), SearchState::make("q", basis(dim, 0))};
}

// Three frames with query sims (0.9, 0.8, 0.1), sim(0,1) = 0.95 and the
// other pairs orthogonal.
inline QueryStore mmr_instance() {
  const double b = std::sqrt(1.0 - 0.95 * 0.95);
  const std::vector<std::vector<double>> rows{
      {1.0, 0.0, 0.0},
      {0.95, b, 0.0},
      {0.0, 0.0, 1.0},
  };
  std::vector<double> q(4, 0.0);
  q[0] = 0.9;
  q[1] = (0.8 - 0.95 * 0.9) / b;
  q[2] = 0.1;
  q[3] = std::sqrt(1.0 - q[0] * q[0] - q[1] * q[1] - q[2] * q[2]);
  std::vector<std::vector<double>> padded;
  for (auto row : rows) {
    row.push_back(0.0);
    padded.push_back(row);
  }
  return {EmbeddingStore::from_rows(padded), SearchState::make("q", q)};
}

}  // namespace vidloop::testing
