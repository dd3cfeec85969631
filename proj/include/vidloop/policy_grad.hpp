#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "vidloop/retrieval.hpp"
#include "vidloop/store.hpp"

namespace vidloop {

using Vector = std::vector<double>;

enum class BaselineMode { zero, running_mean };

struct PolicyGradConfig {
  double step_size = 0.5;
  BaselineMode baseline_mode = BaselineMode::running_mean;
  double redundancy_weight = 0.5;
  double temperature = 1.0;

  void validate() const;
};

/// Reward baseline b. In running-mean mode the value is the mean of the
/// rewards observed so far (0 before the first observation).
class RewardBaseline {
 public:
  explicit RewardBaseline(BaselineMode mode = BaselineMode::running_mean) : mode_(mode) {}

  double value() const noexcept;
  void observe(double reward) noexcept;
  std::size_t count() const noexcept { return count_; }

 private:
  BaselineMode mode_;
  double mean_ = 0.0;
  std::size_t count_ = 0;
};

/// Gradient of <v_i, s/||s||> with respect to the unnormalized search vector s.
Vector sim_gradient(const EmbeddingStore& store, std::size_t frame, std::span<const double> s);

/// Sum over the pool of pi(j|s) * g_j(s).
Vector mean_sim_gradient(const EmbeddingStore& store, std::span<const std::size_t> pool,
                         std::span<const double> s, double temperature);

/// Score function of the softmax policy: (g_i(s) - gbar(s)) / temperature.
Vector log_policy_gradient(const EmbeddingStore& store, std::span<const std::size_t> pool,
                           std::span<const double> s, std::size_t frame, double temperature);

/// Sum over draws t of grad log pi(i_t | s, i_<t), each draw's policy
/// renormalized over the frames of `pool` not drawn before it.
Vector sequence_log_policy_gradient(const EmbeddingStore& store,
                                    std::span<const std::size_t> pool,
                                    std::span<const double> s,
                                    std::span<const std::size_t> sampled_frames,
                                    double temperature);

/// s + eta * (sum_t grad log pi(i_t | s, i_<t)) * (reward - baseline).
/// `pool` defaults to every frame of the store when empty.
Vector reinforce_update(std::span<const double> s, std::span<const std::size_t> sampled_frames,
                        double reward, double baseline, const PolicyGradConfig& config,
                        const EmbeddingStore& store, std::span<const std::size_t> pool = {});

/// Mean query relevance of the set minus gamma times its largest pairwise similarity.
double surrogate_value(const EmbeddingStore& store, const WorkingSet& working,
                       std::span<const double> s, double gamma);

/// Gradient of surrogate_value with the set held fixed; the redundancy
/// term does not depend on s and contributes nothing.
Vector surrogate_gradient(const EmbeddingStore& store, const WorkingSet& working,
                          std::span<const double> s, double gamma);

struct GradReport {
  std::vector<Vector> per_frame_gradients;
  Vector mean_gradient;
  std::vector<Vector> log_policy_gradients;
  double advantage = 0.0;
  double surrogate_value = 0.0;
  double objective_estimate = 0.0;
};

/// Collects every gradient quantity for one round at search vector s.
/// `objective_estimate` is the reward itself (a one-sample estimate of J).
GradReport grad_report(const EmbeddingStore& store, std::span<const std::size_t> pool,
                       const WorkingSet& working, std::span<const double> s, double reward,
                       double baseline, const PolicyGradConfig& config);

}  // namespace vidloop
