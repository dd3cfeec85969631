#include "vidloop/policy_grad.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "vidloop/errors.hpp"

namespace vidloop {

namespace {

void axpy(double a, std::span<const double> x, Vector& y) {
  for (std::size_t k = 0; k < y.size(); ++k) y[k] += a * x[k];
}

std::vector<double> policy_at(const EmbeddingStore& store, std::span<const std::size_t> pool,
                              std::span<const double> s_hat, double temperature) {
  std::vector<double> sims(pool.size());
  for (std::size_t k = 0; k < pool.size(); ++k) sims[k] = dot(store.row(pool[k]), s_hat);
  return softmax(sims, temperature);
}

void check_search(const EmbeddingStore& store, std::span<const double> s) {
  if (s.size() != store.dim()) {
    throw ValidationError(
        fmt::format("search vector has dimension {}, store has {}", s.size(), store.dim()));
  }
}

}  // namespace

void PolicyGradConfig::validate() const {
  if (!(step_size >= 0.0) || !std::isfinite(step_size)) {
    throw ValidationError(fmt::format("step size must be non-negative, got {}", step_size));
  }
  if (!(redundancy_weight >= 0.0)) {
    throw ValidationError(
        fmt::format("redundancy weight must be non-negative, got {}", redundancy_weight));
  }
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ValidationError(fmt::format("temperature must be positive, got {}", temperature));
  }
}

double RewardBaseline::value() const noexcept {
  return mode_ == BaselineMode::running_mean ? mean_ : 0.0;
}

void RewardBaseline::observe(double reward) noexcept {
  ++count_;
  mean_ += (reward - mean_) / static_cast<double>(count_);
}

Vector sim_gradient(const EmbeddingStore& store, std::size_t frame, std::span<const double> s) {
  check_search(store, s);
  const double length = norm(s);
  if (!(length > 1e-12)) throw ValidationError("similarity gradient at a zero search vector");
  const auto v = store.row(frame);
  const Vector s_hat = normalize(s);
  const double c = dot(v, s_hat);
  Vector g(s.size());
  for (std::size_t k = 0; k < g.size(); ++k) g[k] = (v[k] - c * s_hat[k]) / length;
  return g;
}

Vector mean_sim_gradient(const EmbeddingStore& store, std::span<const std::size_t> pool,
                         std::span<const double> s, double temperature) {
  if (pool.empty()) throw ValidationError("policy over an empty pool");
  check_search(store, s);
  const auto p = policy_at(store, pool, normalize(s), temperature);
  Vector mean(s.size(), 0.0);
  for (std::size_t k = 0; k < pool.size(); ++k) axpy(p[k], sim_gradient(store, pool[k], s), mean);
  return mean;
}

Vector log_policy_gradient(const EmbeddingStore& store, std::span<const std::size_t> pool,
                           std::span<const double> s, std::size_t frame, double temperature) {
  if (pool.empty()) throw ValidationError("policy over an empty pool");
  if (std::find(pool.begin(), pool.end(), frame) == pool.end()) {
    throw ValidationError(fmt::format("frame {} is not in the pool", frame));
  }
  Vector g = sim_gradient(store, frame, s);
  const Vector mean = mean_sim_gradient(store, pool, s, temperature);
  for (std::size_t k = 0; k < g.size(); ++k) g[k] = (g[k] - mean[k]) / temperature;
  return g;
}

Vector sequence_log_policy_gradient(const EmbeddingStore& store,
                                    std::span<const std::size_t> pool,
                                    std::span<const double> s,
                                    std::span<const std::size_t> sampled_frames,
                                    double temperature) {
  check_search(store, s);
  std::vector<std::size_t> remaining(pool.begin(), pool.end());
  Vector total(s.size(), 0.0);
  for (std::size_t frame : sampled_frames) {
    const Vector g = log_policy_gradient(store, remaining, s, frame, temperature);
    axpy(1.0, g, total);
    remaining.erase(std::find(remaining.begin(), remaining.end(), frame));
  }
  return total;
}

Vector reinforce_update(std::span<const double> s, std::span<const std::size_t> sampled_frames,
                        double reward, double baseline, const PolicyGradConfig& config,
                        const EmbeddingStore& store, std::span<const std::size_t> pool) {
  config.validate();
  if (sampled_frames.empty()) throw ValidationError("reinforce update needs sampled frames");
  std::vector<std::size_t> frames;
  if (pool.empty()) {
    frames = all_frames(store);
    pool = frames;
  }
  Vector next(s.begin(), s.end());
  const double advantage = reward - baseline;
  if (advantage == 0.0 || config.step_size == 0.0) return next;
  const Vector direction =
      sequence_log_policy_gradient(store, pool, s, sampled_frames, config.temperature);
  axpy(config.step_size * advantage, direction, next);
  return next;
}

double surrogate_value(const EmbeddingStore& store, const WorkingSet& working,
                       std::span<const double> s, double gamma) {
  if (working.empty()) throw ValidationError("surrogate value of an empty set");
  check_search(store, s);
  const Vector s_hat = normalize(s);
  double relevance = 0.0;
  for (std::size_t i : working.indices) relevance += dot(store.row(i), s_hat);
  relevance /= static_cast<double>(working.size());

  double redundancy = 0.0;
  bool any = false;
  for (std::size_t a = 0; a < working.size(); ++a) {
    for (std::size_t b = a + 1; b < working.size(); ++b) {
      const double sim = frame_sim(store, working.indices[a], working.indices[b]);
      redundancy = any ? std::max(redundancy, sim) : sim;
      any = true;
    }
  }
  return relevance - gamma * redundancy;
}

Vector surrogate_gradient(const EmbeddingStore& store, const WorkingSet& working,
                          std::span<const double> s, double /*gamma*/) {
  if (working.empty()) throw ValidationError("surrogate gradient of an empty set");
  Vector g(s.size(), 0.0);
  const double weight = 1.0 / static_cast<double>(working.size());
  for (std::size_t i : working.indices) axpy(weight, sim_gradient(store, i, s), g);
  return g;
}

GradReport grad_report(const EmbeddingStore& store, std::span<const std::size_t> pool,
                       const WorkingSet& working, std::span<const double> s, double reward,
                       double baseline, const PolicyGradConfig& config) {
  config.validate();
  if (pool.empty()) throw ValidationError("policy over an empty pool");
  GradReport report;
  report.per_frame_gradients.reserve(pool.size());
  report.log_policy_gradients.reserve(pool.size());
  for (std::size_t frame : pool) report.per_frame_gradients.push_back(sim_gradient(store, frame, s));
  report.mean_gradient = mean_sim_gradient(store, pool, s, config.temperature);
  for (const Vector& g : report.per_frame_gradients) {
    Vector score(g.size());
    for (std::size_t k = 0; k < g.size(); ++k) {
      score[k] = (g[k] - report.mean_gradient[k]) / config.temperature;
    }
    report.log_policy_gradients.push_back(std::move(score));
  }
  report.advantage = reward - baseline;
  if (!working.empty()) {
    report.surrogate_value = surrogate_value(store, working, s, config.redundancy_weight);
  }
  report.objective_estimate = reward;
  return report;
}

}  // namespace vidloop
