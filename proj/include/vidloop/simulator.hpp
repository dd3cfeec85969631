#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "vidloop/policy_grad.hpp"
#include "vidloop/retrieval.hpp"
#include "vidloop/store.hpp"

namespace vidloop {

/// Synthetic pool in which a known subset of frames carries the evidence.
///
/// Non-planted frames are isotropic random unit vectors. Planted frames are
/// normalize(hidden + noise * g / sqrt(dim)) for Gaussian g, so their
/// similarity to the hidden direction is about 1 / sqrt(1 + noise^2).
struct PlantedEnv {
  EmbeddingStore store;
  std::vector<std::size_t> planted;  // ascending
  Vector hidden;
  std::uint64_t seed = 0;
};

inline constexpr double kPlantedNoise = 0.5;

PlantedEnv make_env(std::size_t n_frames, std::size_t dim, std::size_t n_planted,
                    std::uint64_t seed);

/// Fraction of planted frames present in `frames`.
double reward(const PlantedEnv& env, std::span<const std::size_t> frames);
double reward(const PlantedEnv& env, const WorkingSet& working);

struct NumericLoopOptions {
  std::size_t steps = 20;
  std::size_t draws = 4;  // K frames sampled per step
  /// Starting search vector; a random direction when unset.
  std::optional<Vector> initial_search;
};

struct NumericTrajectory {
  std::vector<double> rewards;
  Vector initial_search;
  Vector final_search;
};

/// Test-time RL on the planted environment: each step samples K frames
/// without replacement from the softmax policy at
/// `retrieval.softmax_temperature`, scores them, and applies the REINFORCE
/// update. `config.temperature` is overridden by the retrieval temperature so
/// the score function matches the sampling policy. The generator is seeded
/// from `retrieval.rng_seed`.
NumericTrajectory run_numeric_loop(const PlantedEnv& env, const PolicyGradConfig& config,
                                   const RetrievalConfig& retrieval,
                                   const NumericLoopOptions& options = {});

/// Monte Carlo estimate of the expected reward of the policy at `s`.
/// A fixed `seed` gives common random numbers across calls.
double objective_estimate(const PlantedEnv& env, std::span<const double> s, std::size_t draws,
                          double temperature, std::size_t samples, std::uint64_t seed);

/// Slope of the least-squares line through (k, values[k]).
double least_squares_slope(std::span<const double> values);

double mean(std::span<const double> values);

/// Sample standard deviation (n - 1 denominator); 0 for fewer than 2 values.
double stddev(std::span<const double> values);

/// Standard Gaussian via Box-Muller on the generator's raw output, so
/// streams are identical on every standard library.
double standard_normal(Rng& rng);

}  // namespace vidloop
