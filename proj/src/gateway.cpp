#include "vidloop/gateway.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <type_traits>

#include <fmt/format.h>
#include <httplib.h>
#include <json.hpp>

#include "vidloop/errors.hpp"
#include "vidloop/store.hpp"

namespace vidloop {

using json = nlohmann::json;

namespace {

constexpr std::size_t kMaxJsonDepth = 64;
constexpr std::size_t kMaxJsonCandidates = 256;
constexpr std::size_t kExcerptBytes = 200;

constexpr std::string_view kOneShotUser =
    "Question: What color is the car? Global caption: A red car parks on a quiet street. "
    "Answer: The car is red.";
constexpr std::string_view kOneShotAssistant =
    R"({"score": 0.9, "verdict": "accept", "brief_reason": ["color matches the caption"]})";

std::string scrub(std::string text, const std::string& secret) {
  if (secret.empty()) return text;
  for (std::size_t pos = text.find(secret); pos != std::string::npos;
       pos = text.find(secret, pos)) {
    text.replace(pos, secret.size(), "***");
    pos += 3;
  }
  return text;
}

std::string excerpt(std::string_view body) {
  std::string out(body.substr(0, kExcerptBytes));
  if (body.size() > kExcerptBytes) out += "...";
  return out;
}

struct Endpoint {
  std::string base;
  std::string path;
};

Endpoint split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw ValidationError(fmt::format("endpoint '{}' lacks a scheme", url));
  }
  const std::string scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") {
    throw ValidationError(fmt::format("unsupported endpoint scheme '{}'", scheme));
  }
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

// POSTs `body` and hands the parsed reply to `extract`, which returns nullopt
// when the body lacks the expected fields. Transport failures and malformed
// bodies are retried; HTTP errors are not.
template <typename Extract>
auto post_with_retries(const BackendConfig& config, const std::string& body, Extract extract,
                       CallMeta* meta) ->
    typename std::invoke_result_t<Extract, const json&>::value_type {
  const Endpoint endpoint = split_url(config.endpoint);
  httplib::Client client(endpoint.base);
  if (!client.is_valid()) {
    throw ValidationError(
        scrub(fmt::format("cannot create HTTP client for '{}'", endpoint.base), config.api_key));
  }
  client.set_connection_timeout(config.timeout);
  client.set_read_timeout(config.timeout);
  client.set_write_timeout(config.timeout);

  httplib::Headers headers;
  if (!config.api_key.empty()) headers.emplace("Authorization", "Bearer " + config.api_key);

  const int attempts = 1 + std::max(0, config.max_retries);
  std::string last_error;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    if (meta != nullptr) {
      meta->attempts = attempt;
      meta->retries = attempt - 1;
    }
    auto result = client.Post(endpoint.path, headers, body, "application/json");
    if (!result) {
      last_error = httplib::to_string(result.error());
      continue;
    }
    if (result->status >= 400) {
      throw ServiceError(result->status,
                         scrub(fmt::format("service returned HTTP {}: {}", result->status,
                                           excerpt(result->body)),
                               config.api_key));
    }
    const json reply = json::parse(result->body, nullptr, false);
    if (reply.is_discarded()) {
      last_error = "malformed response body";
      continue;
    }
    if (auto value = extract(reply)) return std::move(*value);
    last_error = "response body lacks the expected fields";
  }
  throw TransportError(scrub(fmt::format("request to {} failed after {} attempt(s): {}",
                                         config.endpoint, attempts, last_error),
                             config.api_key));
}

std::string line_after(std::string_view prompt, std::string_view prefix) {
  for (std::size_t pos = 0; pos < prompt.size();) {
    const std::size_t end = std::min(prompt.find('\n', pos), prompt.size());
    const std::string_view line = prompt.substr(pos, end - pos);
    if (line.substr(0, prefix.size()) == prefix) return std::string(line.substr(prefix.size()));
    pos = end + 1;
  }
  return {};
}

bool has_temporal_cue_impl(std::string_view question) {
  static constexpr std::string_view kCues[] = {
      "how many", "times",  "count",  "before", "after",   "first",  "last",
      "order",    "change", "repeat", "then",   "sequence", "while", "until",
      "begin",    "start",  "end",    "again",  "during",  "later",  "earlier"};
  std::string lower(question);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return std::any_of(std::begin(kCues), std::end(kCues), [&](std::string_view cue) {
    return lower.find(cue) != std::string::npos;
  });
}

std::string frame_ref_text(const FrameRef& frame) {
  return fmt::format("#{} (t={:.3f}s)", frame.index, frame.timestamp);
}

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

QuestionType heuristic_question_type(std::string_view question) {
  return has_temporal_cue_impl(question) ? QuestionType::Dynamic : QuestionType::Static;
}

std::string_view to_string(QuestionType type) {
  return type == QuestionType::Static ? "static" : "dynamic";
}

std::string_view to_string(Decision decision) {
  return decision == Decision::Accept ? "accept" : "reject";
}

std::string verdict_json(const Verdict& verdict) {
  json j{{"score", verdict.score},
         {"verdict", std::string(to_string(verdict.decision))},
         {"brief_reason", verdict.brief_reason}};
  return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

std::optional<std::string> extract_json_object(std::string_view reply) {
  std::size_t tried = 0;
  for (std::size_t start = reply.find('{'); start != std::string_view::npos;
       start = reply.find('{', start + 1)) {
    if (++tried > kMaxJsonCandidates) break;
    std::vector<char> closers;
    bool in_string = false;
    bool escaped = false;
    std::size_t end = std::string_view::npos;
    for (std::size_t pos = start; pos < reply.size(); ++pos) {
      const char c = reply[pos];
      if (in_string) {
        if (escaped) {
          escaped = false;
        } else if (c == '\\') {
          escaped = true;
        } else if (c == '"') {
          in_string = false;
        }
        continue;
      }
      if (c == '"') {
        in_string = true;
      } else if (c == '{' || c == '[') {
        if (closers.size() >= kMaxJsonDepth) break;
        closers.push_back(c == '{' ? '}' : ']');
      } else if (c == '}' || c == ']') {
        if (closers.empty() || closers.back() != c) break;
        closers.pop_back();
        if (closers.empty()) {
          end = pos;
          break;
        }
      }
    }
    if (end == std::string_view::npos) continue;
    const std::string candidate(reply.substr(start, end - start + 1));
    const json parsed = json::parse(candidate, nullptr, false);
    if (!parsed.is_discarded() && parsed.is_object()) return candidate;
  }
  return std::nullopt;
}

namespace {

json parse_object(std::string_view reply, std::string_view role) {
  const auto object = extract_json_object(reply);
  if (!object) throw ParseError(fmt::format("{} reply contains no JSON object", role));
  return json::parse(*object, nullptr, false);
}

}  // namespace

Verdict parse_evaluator(std::string_view reply) {
  const json j = parse_object(reply, "evaluator");
  const auto score = j.find("score");
  if (score == j.end() || !score->is_number()) {
    throw ParseError("evaluator reply lacks a numeric score");
  }
  const double value = score->get<double>();
  if (!(value >= 0.0 && value <= 1.0)) {
    throw ParseError(fmt::format("evaluator score {} outside [0, 1]", value));
  }
  const auto verdict = j.find("verdict");
  if (verdict == j.end() || !verdict->is_string()) {
    throw ParseError("evaluator reply lacks a verdict");
  }
  const auto& text = verdict->get_ref<const std::string&>();
  Verdict out;
  out.score = value;
  if (text == "accept") {
    out.decision = Decision::Accept;
  } else if (text == "reject") {
    out.decision = Decision::Reject;
  } else {
    throw ParseError("evaluator verdict must be \"accept\" or \"reject\"");
  }
  if (const auto reason = j.find("brief_reason"); reason != j.end()) {
    if (reason->is_string()) {
      out.brief_reason = reason->get<std::string>();
    } else if (reason->is_array()) {
      for (const auto& item : *reason) {
        if (!item.is_string()) continue;
        if (!out.brief_reason.empty()) out.brief_reason += "; ";
        out.brief_reason += item.get<std::string>();
      }
    }
  }
  return out;
}

std::string parse_reflector(std::string_view reply) {
  const json j = parse_object(reply, "reflector");
  const auto query = j.find("refined_query");
  if (query == j.end() || !query->is_string()) {
    throw ParseError("reflector reply lacks a refined_query string");
  }
  return query->get<std::string>();
}

QuestionType parse_router(std::string_view reply) {
  const json j = parse_object(reply, "router");
  const auto qtype = j.find("qtype");
  if (qtype == j.end() || !qtype->is_string()) throw ParseError("router reply lacks qtype");
  const auto& text = qtype->get_ref<const std::string&>();
  if (text == "static") return QuestionType::Static;
  if (text == "dynamic") return QuestionType::Dynamic;
  throw ParseError("router qtype must be \"static\" or \"dynamic\"");
}

void BackendConfig::validate() const {
  if (kind == BackendKind::http) {
    if (endpoint.empty()) throw ValidationError("http backend requires an endpoint");
    if (model_name.empty()) throw ValidationError("http backend requires a model name");
    split_url(endpoint);
  } else if (!responder) {
    throw ValidationError("mock backend requires a responder");
  }
  if (timeout.count() <= 0) throw ValidationError("backend timeout must be positive");
  if (max_retries < 0) throw ValidationError("max retries must be non-negative");
}

HttpBackend::HttpBackend(BackendConfig config) : config_(std::move(config)) {
  config_.kind = BackendKind::http;
  config_.validate();
}

std::string HttpBackend::complete(std::string_view prompt, CallMeta* meta) {
  const json request{
      {"model", config_.model_name},
      {"messages", json::array({json{{"role", "user"}, {"content", std::string(prompt)}}})},
      {"temperature", config_.sampling_temperature},
  };
  const std::string body = request.dump(-1, ' ', false, json::error_handler_t::replace);
  return post_with_retries(
      config_, body,
      [](const json& reply) -> std::optional<std::string> {
        const auto choices = reply.find("choices");
        if (choices == reply.end() || !choices->is_array() || choices->empty()) return {};
        const json& first = choices->front();
        if (!first.is_object()) return {};
        const auto message = first.find("message");
        if (message == first.end() || !message->is_object()) return {};
        const auto content = message->find("content");
        if (content == message->end() || !content->is_string()) return {};
        return content->get<std::string>();
      },
      meta);
}

MockBackend::MockBackend(MockResponder responder) : responder_(std::move(responder)) {
  if (!responder_) throw ValidationError("mock backend requires a responder");
}

std::string MockBackend::complete(std::string_view prompt, CallMeta* meta) {
  ++calls_;
  if (meta != nullptr) *meta = CallMeta{1, 0};
  return responder_(prompt);
}

FallbackBackend::FallbackBackend(std::unique_ptr<Backend> primary,
                                 std::unique_ptr<Backend> fallback)
    : primary_(std::move(primary)), fallback_(std::move(fallback)) {}

std::string FallbackBackend::complete(std::string_view prompt, CallMeta* meta) {
  try {
    return primary_->complete(prompt, meta);
  } catch (const TransportError&) {
    ++fallbacks_;
    return fallback_->complete(prompt, meta);
  }
}

std::unique_ptr<Backend> make_backend(const BackendConfig& config) {
  config.validate();
  if (config.kind == BackendKind::http) return std::make_unique<HttpBackend>(config);
  return std::make_unique<MockBackend>(config.responder);
}

std::string call(const BackendConfig& config, std::string_view prompt, CallMeta* meta) {
  return make_backend(config)->complete(prompt, meta);
}

MockResponder make_scripted_mock(MockScript script) {
  struct State {
    MockScript script;
    std::size_t evaluations = 0;
    std::size_t reflections = 0;
  };
  auto state = std::make_shared<State>(State{std::move(script)});
  return [state](std::string_view prompt) -> std::string {
    const auto kind = classify_prompt(prompt);
    if (!kind) return {};
    switch (*kind) {
      case PromptKind::route: {
        if (state->script.router_reply) return *state->script.router_reply;
        const std::string question = line_after(prompt, "Question. ");
        return heuristic_question_type(question) == QuestionType::Dynamic
                   ? R"({"qtype":"dynamic","rationale":"temporal cue"})"
                   : R"({"qtype":"static","rationale":"attribute or identity"})";
      }
      case PromptKind::frame_note:
        return fmt::format("Frame {} shows the scene.", line_after(prompt, "Frame: "));
      case PromptKind::summarize: {
        std::size_t notes = 0;
        for (std::size_t pos = prompt.find("\n- "); pos != std::string_view::npos;
             pos = prompt.find("\n- ", pos + 1)) {
          ++notes;
        }
        return fmt::format("A scene summarized from {} frame notes.", notes);
      }
      case PromptKind::answer:
        return fmt::format("Answer from keyframes {}.", line_after(prompt, "Keyframes (earlier → later): "));
      case PromptKind::evaluate: {
        const auto& scores = state->script.evaluator_scores;
        const double score =
            scores.empty() ? 0.0 : scores[std::min(state->evaluations, scores.size() - 1)];
        ++state->evaluations;
        const Decision decision = state->script.evaluator_verdict.value_or(
            score >= 0.7 ? Decision::Accept : Decision::Reject);
        return verdict_json(Verdict{score, decision, "scripted evaluation"});
      }
      case PromptKind::reflect: {
        const auto& queries = state->script.refined_queries;
        std::string refined;
        if (!queries.empty()) {
          refined = queries[std::min(state->reflections, queries.size() - 1)];
        } else {
          std::string question = line_after(prompt, "Question: ");
          question.erase(std::remove(question.begin(), question.end(), '?'), question.end());
          refined = "frames showing " + question;
        }
        ++state->reflections;
        return json{{"refined_query", refined}}.dump(-1, ' ', false,
                                                     json::error_handler_t::replace);
      }
      case PromptKind::global_answer:
        return "Caption-only answer: " + line_after(prompt, "Global caption (may miss fine details): ");
    }
    return {};
  };
}

Gateway::Gateway(std::unique_ptr<Backend> backend) : backend_(std::move(backend)) {
  if (!backend_) throw ValidationError("gateway requires a backend");
}

std::string Gateway::send(const std::string& prompt) {
  ++calls_;
  return backend_->complete(prompt);
}

QuestionType Gateway::route(std::string_view question) {
  return parse_router(send(render_prompt(PromptKind::route, {{"question", std::string(question)}})));
}

std::string Gateway::frame_note(const FrameRef& frame) {
  return send(render_prompt(PromptKind::frame_note, {{"frame_ref", frame_ref_text(frame)}}));
}

std::string Gateway::summarize(const std::vector<std::string>& notes) {
  std::string bullets;
  for (const auto& note : notes) {
    if (!bullets.empty()) bullets += '\n';
    bullets += "- " + note;
  }
  return send(render_prompt(PromptKind::summarize, {{"notes", bullets}}));
}

std::string Gateway::answer(std::string_view question, std::string_view global_caption,
                            const std::vector<FrameRef>& frames) {
  std::string refs;
  for (const auto& frame : frames) {
    if (!refs.empty()) refs += ", ";
    refs += frame_ref_text(frame);
  }
  return send(render_prompt(PromptKind::answer, {{"question", std::string(question)},
                                                 {"global_caption", std::string(global_caption)},
                                                 {"frames", refs}}));
}

Verdict Gateway::evaluate(std::string_view question, std::string_view global_caption,
                          std::string_view answer) {
  const std::string prompt =
      render_prompt(PromptKind::evaluate, {{"one_shot_user", std::string(kOneShotUser)},
                                           {"one_shot_assistant", std::string(kOneShotAssistant)},
                                           {"question", std::string(question)},
                                           {"global_caption", std::string(global_caption)},
                                           {"answer", std::string(answer)}});
  for (int attempt = 0; attempt < 2; ++attempt) {
    try {
      return parse_evaluator(send(prompt));
    } catch (const ParseError&) {
    }
  }
  return Verdict{0.0, Decision::Reject, "evaluator reply could not be parsed"};
}

std::string Gateway::reflect(std::string_view question, std::string_view global_caption,
                             std::string_view last_answer, const Verdict& verdict) {
  const std::string prompt =
      render_prompt(PromptKind::reflect, {{"question", std::string(question)},
                                          {"global_caption", std::string(global_caption)},
                                          {"last_answer", std::string(last_answer)},
                                          {"eval_json", verdict_json(verdict)}});
  try {
    return parse_reflector(send(prompt));
  } catch (const ParseError&) {
    return parse_reflector(send(prompt));
  }
}

std::string Gateway::global_answer(std::string_view question, std::string_view global_caption) {
  return send(render_prompt(PromptKind::global_answer,
                            {{"question", std::string(question)},
                             {"global_caption", std::string(global_caption)}}));
}

HashingTextEmbedder::HashingTextEmbedder(std::size_t dim, std::uint64_t seed)
    : dim_(dim), seed_(seed) {
  if (dim_ == 0) throw ValidationError("embedding dimension must be positive");
}

std::vector<double> HashingTextEmbedder::embed(std::string_view text) {
  std::vector<double> v(dim_, 0.0);
  std::string token;
  auto flush = [&] {
    if (token.empty()) return;
    std::uint64_t h = 0xcbf29ce484222325ULL ^ seed_;
    for (unsigned char c : token) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h = mix64(h);
    v[h % dim_] += (h >> 63) != 0 ? 1.0 : -1.0;
    token.clear();
  };
  for (unsigned char c : text) {
    if (std::isalnum(c) != 0) {
      token.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
    }
  }
  flush();
  return normalize(v);
}

HttpTextEmbedder::HttpTextEmbedder(BackendConfig config) : config_(std::move(config)) {
  config_.kind = BackendKind::http;
  config_.validate();
}

std::vector<double> HttpTextEmbedder::embed(std::string_view text) {
  const json request{{"model", config_.model_name}, {"input", std::string(text)}};
  std::vector<double> v = post_with_retries(
      config_, request.dump(-1, ' ', false, json::error_handler_t::replace),
      [](const json& reply) -> std::optional<std::vector<double>> {
        const auto data = reply.find("data");
        if (data == reply.end() || !data->is_array() || data->empty()) return {};
        const json& first = data->front();
        if (!first.is_object()) return {};
        const auto embedding = first.find("embedding");
        if (embedding == first.end() || !embedding->is_array() || embedding->empty()) return {};
        std::vector<double> out;
        out.reserve(embedding->size());
        for (const auto& x : *embedding) {
          if (!x.is_number()) return {};
          out.push_back(x.get<double>());
        }
        return out;
      },
      nullptr);
  return normalize(v);
}

}  // namespace vidloop
