#include "vidloop/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "vidloop/errors.hpp"

namespace vidloop {

namespace {

// Uniform in [0, 1) from the top 53 bits; identical on every standard library.
double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

void check_lambda(double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ValidationError(fmt::format("mmr lambda must lie in [0, 1], got {}", lambda));
  }
}

void check_unique_in_bounds(const EmbeddingStore& store, std::span<const std::size_t> frames) {
  std::vector<std::size_t> sorted(frames.begin(), frames.end());
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ValidationError("frame set contains duplicates");
  }
  if (!sorted.empty() && sorted.back() >= store.n_frames()) {
    throw BoundsError(fmt::format("frame index {} out of range [0, {})", sorted.back(),
                                  store.n_frames()));
  }
}

std::uint64_t binomial_capped(std::uint64_t n, std::uint64_t k, std::uint64_t cap) {
  k = std::min(k, n - k);
  std::uint64_t c = 1;
  for (std::uint64_t i = 1; i <= k; ++i) {
    // c * (n - k + i) / i stays integral at every step.
    c = c * (n - k + i) / i;
    if (c > cap) return cap + 1;
  }
  return c;
}

}  // namespace

bool WorkingSet::contains(std::size_t frame) const {
  return std::find(indices.begin(), indices.end(), frame) != indices.end();
}

void RetrievalConfig::validate(std::size_t max_rounds) const {
  if (!(softmax_temperature > 0.0) || !std::isfinite(softmax_temperature)) {
    throw ValidationError(
        fmt::format("softmax temperature must be positive, got {}", softmax_temperature));
  }
  check_lambda(mmr_lambda);
  auto check_schedule = [&](const std::vector<std::size_t>& schedule, const char* name,
                            bool increasing) {
    if (schedule.empty()) throw ValidationError(fmt::format("{} schedule is empty", name));
    if (schedule.size() > max_rounds) {
      throw ValidationError(fmt::format("{} schedule has {} entries but max rounds is {}", name,
                                        schedule.size(), max_rounds));
    }
    for (std::size_t i = 0; i < schedule.size(); ++i) {
      if (schedule[i] == 0) throw ValidationError(fmt::format("{} schedule has a zero entry", name));
      if (i > 0 && (increasing ? schedule[i] <= schedule[i - 1] : schedule[i] >= schedule[i - 1])) {
        throw ValidationError(fmt::format("{} schedule must be strictly {}: {}", name,
                                          increasing ? "increasing" : "decreasing",
                                          fmt::join(schedule, ",")));
      }
    }
  };
  check_schedule(static_schedule, "static", true);
  check_schedule(dynamic_schedule, "dynamic", false);
}

void sort_temporal(const EmbeddingStore& store, std::vector<std::size_t>& indices) {
  std::sort(indices.begin(), indices.end(), [&](std::size_t a, std::size_t b) {
    return store.timestamp(a) < store.timestamp(b);
  });
}

void validate_working_set(const EmbeddingStore& store, const WorkingSet& working) {
  check_unique_in_bounds(store, working.indices);
  for (std::size_t i = 1; i < working.indices.size(); ++i) {
    if (!(store.timestamp(working.indices[i - 1]) < store.timestamp(working.indices[i]))) {
      throw ValidationError("working set is not in temporal order");
    }
  }
}

double cosine_sim(const EmbeddingStore& store, std::size_t frame, const SearchState& query) {
  return dot(store.row(frame), query.embedding);
}

double frame_sim(const EmbeddingStore& store, std::size_t a, std::size_t b) {
  return dot(store.row(a), store.row(b));
}

std::vector<std::size_t> all_frames(const EmbeddingStore& store) {
  std::vector<std::size_t> frames(store.n_frames());
  std::iota(frames.begin(), frames.end(), std::size_t{0});
  return frames;
}

std::vector<double> softmax(std::span<const double> logits, double temperature) {
  if (logits.empty()) throw ValidationError("softmax over an empty set");
  if (!(temperature > 0.0)) {
    throw ValidationError(fmt::format("temperature must be positive, got {}", temperature));
  }
  const double peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp((logits[i] - peak) / temperature);
    total += p[i];
  }
  for (double& x : p) x /= total;
  return p;
}

std::vector<double> policy_distribution(const EmbeddingStore& store,
                                        std::span<const std::size_t> pool,
                                        const SearchState& query,
                                        const RetrievalConfig& config) {
  if (pool.empty()) throw ValidationError("policy over an empty pool");
  std::vector<double> sims(pool.size());
  for (std::size_t k = 0; k < pool.size(); ++k) sims[k] = cosine_sim(store, pool[k], query);
  return softmax(sims, config.softmax_temperature);
}

std::vector<std::size_t> sample_without_replacement(const EmbeddingStore& store,
                                                    std::span<const std::size_t> pool,
                                                    std::span<const double> query_embedding,
                                                    double temperature, std::size_t count,
                                                    Rng& rng) {
  if (count > pool.size()) {
    throw ValidationError(fmt::format("cannot draw {} frames from a pool of {}", count, pool.size()));
  }
  std::vector<std::size_t> remaining(pool.begin(), pool.end());
  std::vector<double> sims(remaining.size());
  for (std::size_t k = 0; k < remaining.size(); ++k) {
    sims[k] = dot(store.row(remaining[k]), query_embedding);
  }

  std::vector<std::size_t> drawn;
  drawn.reserve(count);
  while (drawn.size() < count) {
    const std::vector<double> p = softmax(sims, temperature);
    const double u = uniform01(rng);
    double cumulative = 0.0;
    std::size_t pick = p.size() - 1;
    for (std::size_t k = 0; k < p.size(); ++k) {
      cumulative += p[k];
      if (u < cumulative) {
        pick = k;
        break;
      }
    }
    drawn.push_back(remaining[pick]);
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(pick));
    sims.erase(sims.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  return drawn;
}

WorkingSet expand_top_m(const EmbeddingStore& store, const WorkingSet& working,
                        const SearchState& query, std::size_t target,
                        const RetrievalConfig& config, Rng* rng) {
  check_unique_in_bounds(store, working.indices);
  if (target > store.n_frames()) {
    throw ValidationError(
        fmt::format("expand target {} exceeds pool size {}", target, store.n_frames()));
  }
  if (target < working.size()) {
    throw ValidationError(
        fmt::format("expand target {} is below current size {}", target, working.size()));
  }

  WorkingSet out = working;
  out.target = target;
  const std::size_t m = target - working.size();
  if (m > 0) {
    std::vector<std::size_t> unseen;
    for (std::size_t i = 0; i < store.n_frames(); ++i) {
      if (!working.contains(i)) unseen.push_back(i);
    }
    if (config.stochastic) {
      Rng local(config.rng_seed);
      Rng& gen = rng != nullptr ? *rng : local;
      const auto drawn = sample_without_replacement(store, unseen, query.embedding,
                                                    config.softmax_temperature, m, gen);
      out.indices.insert(out.indices.end(), drawn.begin(), drawn.end());
    } else {
      std::vector<double> sims(store.n_frames());
      for (std::size_t i : unseen) sims[i] = cosine_sim(store, i, query);
      std::partial_sort(unseen.begin(), unseen.begin() + static_cast<std::ptrdiff_t>(m),
                        unseen.end(), [&](std::size_t a, std::size_t b) {
                          if (sims[a] != sims[b]) return sims[a] > sims[b];
                          return a < b;
                        });
      out.indices.insert(out.indices.end(), unseen.begin(),
                         unseen.begin() + static_cast<std::ptrdiff_t>(m));
    }
  }
  sort_temporal(store, out.indices);
  return out;
}

WorkingSet shrink_mmr_greedy(const EmbeddingStore& store, const WorkingSet& working,
                             const SearchState& query, std::size_t target, double lambda) {
  check_lambda(lambda);
  check_unique_in_bounds(store, working.indices);
  if (target == 0) throw ValidationError("shrink target must be at least 1");
  if (target > working.size()) {
    throw ValidationError(
        fmt::format("shrink target {} exceeds current size {}", target, working.size()));
  }

  WorkingSet out;
  out.target = target;
  if (target == working.size()) {
    out.indices = working.indices;
    sort_temporal(store, out.indices);
    return out;
  }

  // Candidates in ascending index order so strict '>' keeps the lower index on ties.
  std::vector<std::size_t> candidates = working.indices;
  std::sort(candidates.begin(), candidates.end());
  const std::size_t n = candidates.size();
  std::vector<double> relevance(n);
  for (std::size_t k = 0; k < n; ++k) relevance[k] = cosine_sim(store, candidates[k], query);

  std::vector<bool> taken(n, false);
  // Running max similarity of each candidate to the selected set.
  std::vector<double> redundancy(n, -std::numeric_limits<double>::infinity());

  std::size_t first = 0;
  for (std::size_t k = 1; k < n; ++k) {
    if (relevance[k] > relevance[first]) first = k;
  }

  std::size_t pick = first;
  for (std::size_t step = 0; step < target; ++step) {
    if (step > 0) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < n; ++k) {
        if (taken[k]) continue;
        const double score = lambda * relevance[k] - (1.0 - lambda) * redundancy[k];
        if (score > best) {
          best = score;
          pick = k;
        }
      }
    }
    taken[pick] = true;
    out.indices.push_back(candidates[pick]);
    for (std::size_t k = 0; k < n; ++k) {
      if (!taken[k]) {
        redundancy[k] = std::max(redundancy[k], frame_sim(store, candidates[k], candidates[pick]));
      }
    }
  }
  sort_temporal(store, out.indices);
  return out;
}

double mmr_objective(const EmbeddingStore& store, std::span<const std::size_t> subset,
                     const SearchState& query, double lambda) {
  check_lambda(lambda);
  if (subset.empty()) throw ValidationError("mmr objective of an empty subset");
  double total = 0.0;
  for (std::size_t a = 0; a < subset.size(); ++a) {
    double redundancy = 0.0;
    bool any = false;
    for (std::size_t b = 0; b < subset.size(); ++b) {
      if (a == b) continue;
      const double s = frame_sim(store, subset[a], subset[b]);
      redundancy = any ? std::max(redundancy, s) : s;
      any = true;
    }
    total += lambda * cosine_sim(store, subset[a], query) - (1.0 - lambda) * redundancy;
  }
  return total;
}

MmrOptimum mmr_brute_force(const EmbeddingStore& store, std::span<const std::size_t> pool,
                           const SearchState& query, std::size_t target, double lambda) {
  check_lambda(lambda);
  check_unique_in_bounds(store, pool);
  if (target == 0 || target > pool.size()) {
    throw ValidationError(
        fmt::format("brute-force target {} must lie in [1, {}]", target, pool.size()));
  }
  if (binomial_capped(pool.size(), target, kMmrBruteForceBudget) > kMmrBruteForceBudget) {
    throw ValidationError(fmt::format("C({}, {}) exceeds the brute-force budget of {}",
                                      pool.size(), target, kMmrBruteForceBudget));
  }

  std::vector<std::size_t> sorted(pool.begin(), pool.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();

  std::vector<std::size_t> pos(target);
  std::iota(pos.begin(), pos.end(), std::size_t{0});
  std::vector<std::size_t> subset(target);

  MmrOptimum best;
  best.objective = -std::numeric_limits<double>::infinity();
  // Lexicographic enumeration: the first maximizer seen is the smallest list.
  while (true) {
    for (std::size_t k = 0; k < target; ++k) subset[k] = sorted[pos[k]];
    const double value = mmr_objective(store, subset, query, lambda);
    if (value > best.objective) {
      best.objective = value;
      best.subset = subset;
    }
    std::size_t k = target;
    while (k > 0 && pos[k - 1] == n - target + (k - 1)) --k;
    if (k == 0) break;
    ++pos[k - 1];
    for (std::size_t j = k; j < target; ++j) pos[j] = pos[j - 1] + 1;
  }
  return best;
}

}  // namespace vidloop
