#pragma once

#include <cstddef>
#include <vector>

namespace vidloop::tma {

/// Cosine gain schedules over normalized flow progress u in [0, 1].
/// Text gain decays from 1 + lambda_txt at u = 0 to 1 at txt_breakpoint;
/// image gain rises from 1 at img_breakpoint to 1 + lambda_img at u = 1.
struct Schedule {
  double lambda_txt = 0.3;
  double lambda_img = 0.3;
  double txt_breakpoint = 0.4;
  double img_breakpoint = 0.6;

  void validate() const;
};

double alpha_txt(double u, const Schedule& schedule = {});
double alpha_img(double u, const Schedule& schedule = {});

/// Row-major score matrix for n_visual queries over n_text + n_visual keys.
/// Columns [0, n_text) are text keys, the rest visual keys.
class ScoreMatrix {
 public:
  ScoreMatrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  ScoreMatrix(std::size_t rows, std::size_t cols, double fill = 0.0);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  const std::vector<double>& values() const noexcept { return values_; }

  bool operator==(const ScoreMatrix&) const = default;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<double> values_;
};

struct AttentionInstance {
  std::size_t n_text = 0;
  std::size_t n_visual = 0;
  ScoreMatrix scores{0, 0};
  double u = 0.0;

  void validate() const;
};

/// Multiplies text-key scores by alpha_txt(u) and visual-key scores by alpha_img(u).
ScoreMatrix modulate_scores(const AttentionInstance& instance, const Schedule& schedule = {});

/// Softmax over all keys of the modulated scores, then the total probability
/// on text keys averaged over visual queries.
double attention_text_mass(const AttentionInstance& instance, const Schedule& schedule = {});

struct ScheduleSample {
  double u;
  double alpha_txt;
  double alpha_img;
};

/// `samples` points u = k / (samples - 1), k = 0..samples-1.
std::vector<ScheduleSample> sample_schedule(std::size_t samples, const Schedule& schedule = {});

}  // namespace vidloop::tma
