#pragma once

#include <cstddef>
#include <exception>
#include <string>
#include <string_view>
#include <vector>

#include "vidloop/errors.hpp"
#include "vidloop/gateway.hpp"
#include "vidloop/policy_grad.hpp"
#include "vidloop/retrieval.hpp"
#include "vidloop/store.hpp"

namespace vidloop {

inline constexpr std::size_t kRefinedQueryTokenLimit = 25;

struct LoopConfig {
  std::size_t max_rounds = 3;
  double stop_threshold = 0.7;
  RetrievalConfig retrieval;
  std::size_t seed_frames_for_caption = 16;

  void validate() const;
};

/// Per-question state carried between rounds.
struct LoopState {
  std::string question;
  SearchState search;
  WorkingSet working;
  std::string global_caption;
  std::size_t round = 0;
  QuestionType mode = QuestionType::Static;
  RewardBaseline baseline;
  Rng rng;
};

struct RoundRecord {
  std::size_t round = 0;
  std::vector<std::size_t> working_indices;
  std::string answer;
  Verdict verdict;
  double advantage = 0.0;
  std::string refined_query;
  std::vector<std::string> warnings;
};

struct RoundOutcome {
  RoundRecord record;
  LoopState state;
  bool stop = false;
};

struct LoopResult {
  std::string answer;
  std::vector<RoundRecord> trace;
  QuestionType mode = QuestionType::Static;
  std::string global_caption;
  bool used_fallback = false;
};

/// Raised when a backend failure aborts the loop; carries the rounds that
/// completed before it and the original exception.
class LoopError : public Error {
 public:
  LoopError(const std::string& message, std::vector<RoundRecord> trace, std::exception_ptr cause)
      : Error(message), trace_(std::move(trace)), cause_(std::move(cause)) {}

  const std::vector<RoundRecord>& trace() const noexcept { return trace_; }
  std::exception_ptr cause() const noexcept { return cause_; }

 private:
  std::vector<RoundRecord> trace_;
  std::exception_ptr cause_;
};

/// Source of frame embeddings. The loop calls `encode` once per frame and
/// works from its own cache afterwards.
class FrameEncoder {
 public:
  virtual ~FrameEncoder() = default;
  virtual std::size_t frame_count() const = 0;
  virtual double timestamp(std::size_t frame) const = 0;
  virtual std::vector<float> encode(std::size_t frame) = 0;
};

/// Serves frames from an already-loaded store.
class StoreFrameEncoder final : public FrameEncoder {
 public:
  explicit StoreFrameEncoder(const EmbeddingStore& store) : store_(store) {}
  std::size_t frame_count() const override { return store_.n_frames(); }
  double timestamp(std::size_t frame) const override { return store_.timestamp(frame); }
  std::vector<float> encode(std::size_t frame) override;

 private:
  const EmbeddingStore& store_;
};

/// Encodes every frame exactly once into an in-memory store.
EmbeddingStore cache_frames(FrameEncoder& encoder);

/// floor(i * n_frames / count) for i < count, with count clamped to n_frames.
std::vector<std::size_t> seed_frame_indices(std::size_t n_frames, std::size_t count);

/// Backend classification, falling back to keyword cues on any failure.
QuestionType route_question(std::string_view question, Gateway& gateway);

std::string build_global_caption(const EmbeddingStore& store, Gateway& gateway,
                                 const LoopConfig& config);

/// Working-set size for a 1-based round, clamped to the pool size.
std::size_t scheduled_size(const LoopConfig& config, QuestionType mode, std::size_t round,
                           std::size_t n_frames);

LoopState initial_state(std::string question, QuestionType mode, std::string global_caption,
                        TextEmbedder& embedder, const LoopConfig& config);

/// Replaces the search text and its embedding unless `refined_query` is
/// empty. Over-length queries are applied and noted in `warnings`.
LoopState apply_reflection(const LoopState& state, const std::string& refined_query,
                           TextEmbedder& embedder, std::vector<std::string>& warnings);

/// Reconfigure the working set, answer, evaluate, and reflect when rejected.
RoundOutcome run_round(const LoopState& state, const EmbeddingStore& store, Gateway& gateway,
                       TextEmbedder& embedder, const LoopConfig& config);

LoopResult run_loop(const std::string& question, FrameEncoder& frames, Gateway& gateway,
                    TextEmbedder& embedder, const LoopConfig& config);

LoopResult run_loop(const std::string& question, const EmbeddingStore& store, Gateway& gateway,
                    TextEmbedder& embedder, const LoopConfig& config);

/// JSON array with one object per round: round, working_indices, answer,
/// score, verdict, brief_reason, refined_query, warnings.
std::string trace_to_json(const std::vector<RoundRecord>& trace);

}  // namespace vidloop
