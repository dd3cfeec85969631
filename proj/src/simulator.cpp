#include "vidloop/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <fmt/format.h>

#include "vidloop/errors.hpp"

namespace vidloop {

namespace {

double uniform_open(Rng& rng) {
  // (0, 1): keeps log() finite.
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

Vector random_direction(std::size_t dim, Rng& rng) {
  Vector v(dim);
  for (double& x : v) x = standard_normal(rng);
  return normalize(v);
}

}  // namespace

double standard_normal(Rng& rng) {
  const double u1 = uniform_open(rng);
  const double u2 = uniform_open(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

PlantedEnv make_env(std::size_t n_frames, std::size_t dim, std::size_t n_planted,
                    std::uint64_t seed) {
  if (n_frames < 1 || dim < 1) throw ValidationError("environment needs frames and dimensions");
  if (n_planted == 0) throw ValidationError("environment needs at least one planted frame");
  if (n_planted > n_frames) {
    throw ValidationError(
        fmt::format("cannot plant {} frames in a pool of {}", n_planted, n_frames));
  }
  Rng rng(seed);
  Vector hidden = random_direction(dim, rng);

  std::vector<std::size_t> order(n_frames);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Fisher-Yates on raw generator output.
  for (std::size_t i = n_frames; i > 1; --i) {
    std::swap(order[i - 1], order[rng() % i]);
  }
  std::vector<std::size_t> planted(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_planted));
  std::sort(planted.begin(), planted.end());

  std::vector<std::vector<double>> rows(n_frames);
  const double scale = kPlantedNoise / std::sqrt(static_cast<double>(dim));
  for (std::size_t i = 0; i < n_frames; ++i) {
    if (std::binary_search(planted.begin(), planted.end(), i)) {
      Vector v = hidden;
      for (double& x : v) x += scale * standard_normal(rng);
      rows[i] = normalize(v);
    } else {
      rows[i] = random_direction(dim, rng);
    }
  }
  std::vector<double> timestamps(n_frames);
  for (std::size_t i = 0; i < n_frames; ++i) timestamps[i] = 0.5 * static_cast<double>(i);

  return PlantedEnv{EmbeddingStore::from_rows(rows, std::move(timestamps)), std::move(planted),
                    std::move(hidden), seed};
}

double reward(const PlantedEnv& env, std::span<const std::size_t> frames) {
  std::size_t hits = 0;
  for (std::size_t p : env.planted) {
    if (std::find(frames.begin(), frames.end(), p) != frames.end()) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(env.planted.size());
}

double reward(const PlantedEnv& env, const WorkingSet& working) {
  return reward(env, std::span<const std::size_t>(working.indices));
}

NumericTrajectory run_numeric_loop(const PlantedEnv& env, const PolicyGradConfig& config,
                                   const RetrievalConfig& retrieval,
                                   const NumericLoopOptions& options) {
  if (options.steps < 1) throw ValidationError("numeric loop needs at least one step");
  if (options.draws < 1 || options.draws > env.store.n_frames()) {
    throw ValidationError(fmt::format("draw count {} must lie in [1, {}]", options.draws,
                                      env.store.n_frames()));
  }
  PolicyGradConfig pg = config;
  pg.temperature = retrieval.softmax_temperature;
  pg.validate();

  Rng rng(retrieval.rng_seed);
  NumericTrajectory out;
  if (options.initial_search) {
    if (options.initial_search->size() != env.store.dim()) {
      throw ValidationError("initial search vector has the wrong dimension");
    }
    out.initial_search = *options.initial_search;
  } else {
    out.initial_search = random_direction(env.store.dim(), rng);
  }

  const std::vector<std::size_t> pool = all_frames(env.store);
  RewardBaseline baseline(pg.baseline_mode);
  Vector s = out.initial_search;
  out.rewards.reserve(options.steps);
  for (std::size_t step = 0; step < options.steps; ++step) {
    const Vector s_hat = normalize(s);
    const auto drawn =
        sample_without_replacement(env.store, pool, s_hat, pg.temperature, options.draws, rng);
    const double r = reward(env, drawn);
    out.rewards.push_back(r);
    s = reinforce_update(s, drawn, r, baseline.value(), pg, env.store, pool);
    baseline.observe(r);
  }
  out.final_search = std::move(s);
  return out;
}

double objective_estimate(const PlantedEnv& env, std::span<const double> s, std::size_t draws,
                          double temperature, std::size_t samples, std::uint64_t seed) {
  if (samples == 0) throw ValidationError("objective estimate needs samples");
  const std::vector<std::size_t> pool = all_frames(env.store);
  const Vector s_hat = normalize(s);
  Rng rng(seed);
  double total = 0.0;
  for (std::size_t k = 0; k < samples; ++k) {
    total += reward(env, sample_without_replacement(env.store, pool, s_hat, temperature, draws, rng));
  }
  return total / static_cast<double>(samples);
}

double mean(std::span<const double> values) {
  if (values.empty()) return 0.0;
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double stddev(std::span<const double> values) {
  if (values.size() < 2) return 0.0;
  const double m = mean(values);
  double sq = 0.0;
  for (double v : values) sq += (v - m) * (v - m);
  return std::sqrt(sq / static_cast<double>(values.size() - 1));
}

double least_squares_slope(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n < 2) return 0.0;
  const double x_mean = static_cast<double>(n - 1) / 2.0;
  const double y_mean = mean(values);
  double sxy = 0.0;
  double sxx = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double dx = static_cast<double>(k) - x_mean;
    sxy += dx * (values[k] - y_mean);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

}  // namespace vidloop
