#include "vidloop/tma.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "vidloop/errors.hpp"

namespace vidloop::tma {

namespace {

void check_progress(double u) {
  if (!(u >= 0.0 && u <= 1.0)) {
    throw ValidationError(fmt::format("flow progress u must lie in [0, 1], got {}", u));
  }
}

}  // namespace

void Schedule::validate() const {
  if (!(txt_breakpoint > 0.0 && txt_breakpoint < 1.0) ||
      !(img_breakpoint > 0.0 && img_breakpoint < 1.0)) {
    throw ValidationError("schedule breakpoints must lie in (0, 1)");
  }
  if (!(lambda_txt >= 0.0) || !(lambda_img >= 0.0)) {
    throw ValidationError("schedule gains must be non-negative");
  }
}

double alpha_txt(double u, const Schedule& schedule) {
  check_progress(u);
  schedule.validate();
  if (u > schedule.txt_breakpoint) return 1.0;
  return 1.0 + schedule.lambda_txt / 2.0 *
                   (1.0 + std::cos(std::numbers::pi * u / schedule.txt_breakpoint));
}

double alpha_img(double u, const Schedule& schedule) {
  check_progress(u);
  schedule.validate();
  if (u <= schedule.img_breakpoint) return 1.0;
  const double span = 1.0 - schedule.img_breakpoint;
  return 1.0 + schedule.lambda_img / 2.0 *
                   (1.0 - std::cos(std::numbers::pi * (u - schedule.img_breakpoint) / span));
}

ScoreMatrix::ScoreMatrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows_ * cols_) {
    throw ValidationError(
        fmt::format("score matrix {}x{} needs {} values, got {}", rows_, cols_, rows_ * cols_,
                    values_.size()));
  }
}

ScoreMatrix::ScoreMatrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), values_(rows * cols, fill) {}

void AttentionInstance::validate() const {
  check_progress(u);
  if (scores.rows() != n_visual || scores.cols() != n_text + n_visual) {
    throw ValidationError(fmt::format(
        "scores must be {}x{} for {} text and {} visual tokens, got {}x{}", n_visual,
        n_text + n_visual, n_text, n_visual, scores.rows(), scores.cols()));
  }
  for (double x : scores.values()) {
    if (!std::isfinite(x)) throw ValidationError("attention scores must be finite");
  }
}

ScoreMatrix modulate_scores(const AttentionInstance& instance, const Schedule& schedule) {
  instance.validate();
  const double gain_txt = alpha_txt(instance.u, schedule);
  const double gain_img = alpha_img(instance.u, schedule);
  ScoreMatrix out = instance.scores;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < out.cols(); ++c) {
      out(r, c) *= c < instance.n_text ? gain_txt : gain_img;
    }
  }
  return out;
}

double attention_text_mass(const AttentionInstance& instance, const Schedule& schedule) {
  const ScoreMatrix logits = modulate_scores(instance, schedule);
  if (logits.rows() == 0) throw ValidationError("attention instance has no visual queries");
  double total = 0.0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    double peak = logits(r, 0);
    for (std::size_t c = 1; c < logits.cols(); ++c) peak = std::max(peak, logits(r, c));
    double all = 0.0;
    double text = 0.0;
    for (std::size_t c = 0; c < logits.cols(); ++c) {
      const double w = std::exp(logits(r, c) - peak);
      all += w;
      if (c < instance.n_text) text += w;
    }
    total += text / all;
  }
  return total / static_cast<double>(logits.rows());
}

std::vector<ScheduleSample> sample_schedule(std::size_t samples, const Schedule& schedule) {
  if (samples < 2) throw ValidationError("schedule grid needs at least 2 samples");
  std::vector<ScheduleSample> out;
  out.reserve(samples);
  for (std::size_t k = 0; k < samples; ++k) {
    const double u = k + 1 == samples ? 1.0
                                      : static_cast<double>(k) / static_cast<double>(samples - 1);
    out.push_back({u, alpha_txt(u, schedule), alpha_img(u, schedule)});
  }
  return out;
}

}  // namespace vidloop::tma
