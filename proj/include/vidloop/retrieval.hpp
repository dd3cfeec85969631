#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "vidloop/store.hpp"

namespace vidloop {

using Rng = std::mt19937_64;

/// Frame indices the Actor reasons over, kept in temporal order.
struct WorkingSet {
  std::vector<std::size_t> indices;
  std::size_t target = 0;

  std::size_t size() const noexcept { return indices.size(); }
  bool empty() const noexcept { return indices.empty(); }
  bool contains(std::size_t frame) const;
};

struct RetrievalConfig {
  double softmax_temperature = 1.0;
  double mmr_lambda = 0.5;
  std::vector<std::size_t> static_schedule{4, 8, 16};
  std::vector<std::size_t> dynamic_schedule{64, 32, 16};
  bool stochastic = false;
  std::uint64_t rng_seed = 0;

  /// Throws ValidationError. `max_rounds` bounds the schedule lengths.
  void validate(std::size_t max_rounds) const;
};

/// Checks uniqueness, bounds and temporal order against `store`.
void validate_working_set(const EmbeddingStore& store, const WorkingSet& working);

/// Sorts frame indices by store timestamp (ties cannot occur).
void sort_temporal(const EmbeddingStore& store, std::vector<std::size_t>& indices);

double cosine_sim(const EmbeddingStore& store, std::size_t frame, const SearchState& query);

/// Cosine similarity between two cached frames.
double frame_sim(const EmbeddingStore& store, std::size_t a, std::size_t b);

std::vector<std::size_t> all_frames(const EmbeddingStore& store);

/// Numerically stable softmax of `logits / temperature`.
std::vector<double> softmax(std::span<const double> logits, double temperature);

/// Soft retrieval policy: softmax of query similarity over `pool`.
/// Entry k is the probability of pool[k].
std::vector<double> policy_distribution(const EmbeddingStore& store,
                                        std::span<const std::size_t> pool,
                                        const SearchState& query,
                                        const RetrievalConfig& config);

/// Draws `count` frames from `pool` one at a time, renormalizing the softmax
/// over the frames not yet drawn. Returned in draw order.
std::vector<std::size_t> sample_without_replacement(const EmbeddingStore& store,
                                                    std::span<const std::size_t> pool,
                                                    std::span<const double> query_embedding,
                                                    double temperature, std::size_t count,
                                                    Rng& rng);

/// Adds the `target - |working|` best unseen frames. Deterministic mode takes
/// the exact top-m (lower index wins ties); stochastic mode samples from the
/// policy using `rng`, or a generator seeded from `config.rng_seed` when null.
WorkingSet expand_top_m(const EmbeddingStore& store, const WorkingSet& working,
                        const SearchState& query, std::size_t target,
                        const RetrievalConfig& config = {}, Rng* rng = nullptr);

/// Greedy Maximal Marginal Relevance down-selection to exactly `target` frames.
WorkingSet shrink_mmr_greedy(const EmbeddingStore& store, const WorkingSet& working,
                             const SearchState& query, std::size_t target, double lambda);

/// Sum over i in subset of lambda*sim(i,q) - (1-lambda)*max_{j != i} sim(i,j);
/// the inner max over an empty set is 0.
double mmr_objective(const EmbeddingStore& store, std::span<const std::size_t> subset,
                     const SearchState& query, double lambda);

struct MmrOptimum {
  std::vector<std::size_t> subset;  // ascending frame indices
  double objective = 0.0;
};

inline constexpr std::uint64_t kMmrBruteForceBudget = 1'000'000;

/// Exhaustive argmax of mmr_objective over all `target`-subsets of `pool`.
/// Ties resolve to the lexicographically smallest sorted index list.
MmrOptimum mmr_brute_force(const EmbeddingStore& store, std::span<const std::size_t> pool,
                           const SearchState& query, std::size_t target, double lambda);

}  // namespace vidloop
