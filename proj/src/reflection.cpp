#include "vidloop/reflection.hpp"

#include <algorithm>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "vidloop/errors.hpp"

namespace vidloop {

namespace {

std::size_t count_tokens(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::size_t n = 0;
  for (std::string token; in >> token;) ++n;
  return n;
}

std::vector<FrameRef> frame_refs(const EmbeddingStore& store, const WorkingSet& working) {
  std::vector<FrameRef> refs;
  refs.reserve(working.size());
  for (std::size_t i : working.indices) refs.push_back({i, store.timestamp(i)});
  return refs;
}

}  // namespace

void LoopConfig::validate() const {
  if (max_rounds < 1) throw ValidationError("max rounds must be at least 1");
  if (!(stop_threshold >= 0.0 && stop_threshold <= 1.0)) {
    throw ValidationError(
        fmt::format("stop threshold must lie in [0, 1], got {}", stop_threshold));
  }
  if (seed_frames_for_caption < 1) throw ValidationError("caption needs at least one seed frame");
  retrieval.validate(max_rounds);
}

std::vector<float> StoreFrameEncoder::encode(std::size_t frame) {
  const auto row = store_.raw_row(frame);
  return {row.begin(), row.end()};
}

EmbeddingStore cache_frames(FrameEncoder& encoder) {
  const std::size_t n = encoder.frame_count();
  std::vector<float> flat;
  std::vector<double> timestamps(n);
  std::size_t dim = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> row = encoder.encode(i);
    if (i == 0) {
      dim = row.size();
      flat.reserve(n * dim);
    } else if (row.size() != dim) {
      throw ValidationError(
          fmt::format("frame {} encoded to {} values, expected {}", i, row.size(), dim));
    }
    flat.insert(flat.end(), row.begin(), row.end());
    timestamps[i] = encoder.timestamp(i);
  }
  return EmbeddingStore(n, dim, std::move(flat), std::move(timestamps));
}

std::vector<std::size_t> seed_frame_indices(std::size_t n_frames, std::size_t count) {
  count = std::min(count, n_frames);
  std::vector<std::size_t> seeds(count);
  for (std::size_t i = 0; i < count; ++i) seeds[i] = i * n_frames / count;
  return seeds;
}

QuestionType route_question(std::string_view question, Gateway& gateway) {
  if (question.empty()) throw ValidationError("question must not be empty");
  try {
    return gateway.route(question);
  } catch (const std::exception&) {
    return heuristic_question_type(question);
  }
}

std::string build_global_caption(const EmbeddingStore& store, Gateway& gateway,
                                 const LoopConfig& config) {
  std::vector<std::string> notes;
  for (std::size_t i : seed_frame_indices(store.n_frames(), config.seed_frames_for_caption)) {
    notes.push_back(gateway.frame_note({i, store.timestamp(i)}));
  }
  return gateway.summarize(notes);
}

std::size_t scheduled_size(const LoopConfig& config, QuestionType mode, std::size_t round,
                           std::size_t n_frames) {
  const auto& schedule = mode == QuestionType::Static ? config.retrieval.static_schedule
                                                      : config.retrieval.dynamic_schedule;
  if (round < 1 || schedule.empty()) throw ValidationError("rounds are numbered from 1");
  return std::min(schedule[std::min(round, schedule.size()) - 1], n_frames);
}

LoopState initial_state(std::string question, QuestionType mode, std::string global_caption,
                        TextEmbedder& embedder, const LoopConfig& config) {
  LoopState state;
  state.search = SearchState::make(question, embedder.embed(question));
  state.question = std::move(question);
  state.global_caption = std::move(global_caption);
  state.mode = mode;
  state.rng.seed(config.retrieval.rng_seed);
  return state;
}

LoopState apply_reflection(const LoopState& state, const std::string& refined_query,
                           TextEmbedder& embedder, std::vector<std::string>& warnings) {
  LoopState next = state;
  if (refined_query.empty()) return next;
  if (const std::size_t tokens = count_tokens(refined_query); tokens > kRefinedQueryTokenLimit) {
    warnings.push_back(fmt::format("refined query has {} tokens, limit is {}", tokens,
                                   kRefinedQueryTokenLimit));
  }
  next.search = SearchState::make(refined_query, embedder.embed(refined_query));
  return next;
}

RoundOutcome run_round(const LoopState& state, const EmbeddingStore& store, Gateway& gateway,
                       TextEmbedder& embedder, const LoopConfig& config) {
  if (state.round >= config.max_rounds) {
    throw ValidationError(fmt::format("round budget of {} is exhausted", config.max_rounds));
  }
  RoundOutcome out{{}, state, false};
  LoopState& next = out.state;
  RoundRecord& record = out.record;
  next.round = state.round + 1;
  record.round = next.round;

  const std::size_t target = scheduled_size(config, state.mode, next.round, store.n_frames());
  if (state.mode == QuestionType::Static) {
    next.working = expand_top_m(store, state.working, state.search,
                                std::max(target, state.working.size()), config.retrieval,
                                &next.rng);
  } else {
    WorkingSet broad = state.working;
    if (broad.empty()) broad.indices = all_frames(store);
    next.working = target < broad.size()
                       ? shrink_mmr_greedy(store, broad, state.search, target,
                                           config.retrieval.mmr_lambda)
                       : broad;
    next.working.target = target;
  }
  record.working_indices = next.working.indices;

  record.answer =
      gateway.answer(state.question, state.global_caption, frame_refs(store, next.working));
  record.verdict = gateway.evaluate(state.question, state.global_caption, record.answer);
  record.advantage = record.verdict.score - next.baseline.value();
  next.baseline.observe(record.verdict.score);

  out.stop = record.verdict.score >= config.stop_threshold ||
             record.verdict.decision == Decision::Accept;
  if (!out.stop && next.round < config.max_rounds) {
    std::string refined;
    try {
      refined = gateway.reflect(state.question, state.global_caption, record.answer,
                                record.verdict);
    } catch (const ParseError& e) {
      record.warnings.push_back(fmt::format("reflector reply ignored: {}", e.what()));
    }
    record.refined_query = refined;
    next = apply_reflection(next, refined, embedder, record.warnings);
  }
  return out;
}

LoopResult run_loop(const std::string& question, FrameEncoder& frames, Gateway& gateway,
                    TextEmbedder& embedder, const LoopConfig& config) {
  config.validate();
  if (question.empty()) throw ValidationError("question must not be empty");
  const EmbeddingStore store = cache_frames(frames);

  LoopResult result;
  try {
    result.mode = route_question(question, gateway);
    result.global_caption = build_global_caption(store, gateway, config);
    LoopState state =
        initial_state(question, result.mode, result.global_caption, embedder, config);
    while (state.round < config.max_rounds) {
      RoundOutcome outcome = run_round(state, store, gateway, embedder, config);
      result.trace.push_back(outcome.record);
      if (outcome.stop) {
        result.answer = result.trace.back().answer;
        return result;
      }
      state = std::move(outcome.state);
    }
    result.answer = gateway.global_answer(question, result.global_caption);
    result.used_fallback = true;
    return result;
  } catch (const ValidationError&) {
    throw;
  } catch (const std::exception& e) {
    throw LoopError(fmt::format("loop aborted after {} round(s): {}", result.trace.size(),
                                e.what()),
                    result.trace, std::current_exception());
  }
}

LoopResult run_loop(const std::string& question, const EmbeddingStore& store, Gateway& gateway,
                    TextEmbedder& embedder, const LoopConfig& config) {
  StoreFrameEncoder frames(store);
  return run_loop(question, frames, gateway, embedder, config);
}

std::string trace_to_json(const std::vector<RoundRecord>& trace) {
  nlohmann::json rounds = nlohmann::json::array();
  for (const auto& r : trace) {
    rounds.push_back({
        {"round", r.round},
        {"working_indices", r.working_indices},
        {"answer", r.answer},
        {"score", r.verdict.score},
        {"verdict", std::string(to_string(r.verdict.decision))},
        {"brief_reason", r.verdict.brief_reason},
        {"refined_query", r.refined_query},
        {"warnings", r.warnings},
    });
  }
  return rounds.dump(2, ' ', false, nlohmann::json::error_handler_t::replace);
}

}  // namespace vidloop
