#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vidloop/prompts.hpp"

namespace vidloop {

enum class QuestionType { Static, Dynamic };
enum class Decision { Accept, Reject };

std::string_view to_string(QuestionType type);
std::string_view to_string(Decision decision);

/// Keyword fallback for routing: counting, order and change cues mean dynamic.
QuestionType heuristic_question_type(std::string_view question);

struct Verdict {
  double score = 0.0;
  Decision decision = Decision::Reject;
  std::string brief_reason;

  bool operator==(const Verdict&) const = default;
};

/// Single-line JSON with keys score, verdict, brief_reason.
std::string verdict_json(const Verdict& verdict);

// Reply parsers. Each throws ParseError on anything it cannot accept and
// never fails in any other way.

/// First balanced {...} object in `reply` that parses as JSON, or nullopt.
std::optional<std::string> extract_json_object(std::string_view reply);

Verdict parse_evaluator(std::string_view reply);
std::string parse_reflector(std::string_view reply);
QuestionType parse_router(std::string_view reply);

/// Maps a prompt to a reply; used by the mock backend.
using MockResponder = std::function<std::string(std::string_view prompt)>;

enum class BackendKind { http, mock };

struct BackendConfig {
  BackendKind kind = BackendKind::mock;
  std::string endpoint;  // full chat-completions URL for http
  std::string model_name;
  std::string api_key;
  std::chrono::milliseconds timeout{30'000};
  int max_retries = 1;
  double sampling_temperature = 0.0;
  MockResponder responder;  // mock only

  void validate() const;
};

/// Per-call bookkeeping.
struct CallMeta {
  int attempts = 0;
  int retries = 0;
};

class Backend {
 public:
  virtual ~Backend() = default;
  /// Returns the assistant text for a single-user-message prompt.
  virtual std::string complete(std::string_view prompt, CallMeta* meta = nullptr) = 0;
};

/// Chat-completions client: POST {model, messages:[{role:user,content}],
/// temperature}, bearer auth, retry on transport errors and malformed bodies.
class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(BackendConfig config);
  std::string complete(std::string_view prompt, CallMeta* meta = nullptr) override;

 private:
  BackendConfig config_;
};

class MockBackend final : public Backend {
 public:
  explicit MockBackend(MockResponder responder);
  std::string complete(std::string_view prompt, CallMeta* meta = nullptr) override;

  std::size_t calls() const noexcept { return calls_; }

 private:
  MockResponder responder_;
  std::size_t calls_ = 0;
};

/// Tries `primary`; on TransportError answers from `fallback` instead.
class FallbackBackend final : public Backend {
 public:
  FallbackBackend(std::unique_ptr<Backend> primary, std::unique_ptr<Backend> fallback);
  std::string complete(std::string_view prompt, CallMeta* meta = nullptr) override;

  std::size_t fallbacks() const noexcept { return fallbacks_; }

 private:
  std::unique_ptr<Backend> primary_;
  std::unique_ptr<Backend> fallback_;
  std::size_t fallbacks_ = 0;
};

std::unique_ptr<Backend> make_backend(const BackendConfig& config);

/// One-shot call through a backend built from `config`.
std::string call(const BackendConfig& config, std::string_view prompt, CallMeta* meta = nullptr);

/// Deterministic scripted responder that recognizes each prompt template.
///
/// Evaluator scores are consumed in order; the last one repeats. Everything
/// else is derived from the prompt text so identical prompt sequences give
/// identical replies.
struct MockScript {
  std::vector<double> evaluator_scores{0.9};
  /// Overrides the verdict implied by the score (accept iff score >= 0.7).
  std::optional<Decision> evaluator_verdict;
  /// Refined queries handed out in order; the last one repeats. When empty,
  /// the reflector echoes a declarative cue built from the question.
  std::vector<std::string> refined_queries;
  /// Router reply; when unset the router classifies with keyword cues.
  std::optional<std::string> router_reply;
};

MockResponder make_scripted_mock(MockScript script);

struct FrameRef {
  std::size_t index;
  double timestamp;
};

/// Role-level facade over a backend: Router, caption writer, Actor,
/// Evaluator and Reflector.
class Gateway {
 public:
  explicit Gateway(std::unique_ptr<Backend> backend);

  /// Throws on transport failure or unparseable reply.
  QuestionType route(std::string_view question);
  std::string frame_note(const FrameRef& frame);
  std::string summarize(const std::vector<std::string>& notes);
  std::string answer(std::string_view question, std::string_view global_caption,
                     const std::vector<FrameRef>& frames);
  /// Retries once on a parse failure, then degrades to reject with score 0.
  Verdict evaluate(std::string_view question, std::string_view global_caption,
                   std::string_view answer);
  /// Retries once on a parse failure, then throws ParseError.
  std::string reflect(std::string_view question, std::string_view global_caption,
                      std::string_view last_answer, const Verdict& verdict);
  std::string global_answer(std::string_view question, std::string_view global_caption);

  std::size_t calls() const noexcept { return calls_; }

 private:
  std::string send(const std::string& prompt);

  std::unique_ptr<Backend> backend_;
  std::size_t calls_ = 0;
};

/// Text side of the retriever: maps search text to a unit vector in the
/// same space as the frame embeddings.
class TextEmbedder {
 public:
  virtual ~TextEmbedder() = default;
  virtual std::vector<double> embed(std::string_view text) = 0;
};

/// Offline embedder: signed feature hashing of lowercase word tokens.
class HashingTextEmbedder final : public TextEmbedder {
 public:
  explicit HashingTextEmbedder(std::size_t dim, std::uint64_t seed = 0);
  std::vector<double> embed(std::string_view text) override;

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

/// Embeddings endpoint client: POST {model, input} and read data[0].embedding.
class HttpTextEmbedder final : public TextEmbedder {
 public:
  explicit HttpTextEmbedder(BackendConfig config);
  std::vector<double> embed(std::string_view text) override;

 private:
  BackendConfig config_;
};

}  // namespace vidloop
