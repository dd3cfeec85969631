#include "vidloop/prompts.hpp"

#include <algorithm>
#include <array>
#include <utility>

#include <fmt/format.h>

#include "vidloop/errors.hpp"

namespace vidloop {

namespace {

constexpr std::string_view kRoute =
    "Role. Classify a video question as static or dynamic. Output JSON only.\n"
    "Definitions.\n"
    "- dynamic: requires temporal reasoning such as counting, repetition, order, or changes "
    "over time (e.g., \"how many times\", \"before/after\", \"first/last\").\n"
    "- static: can be answered from a small set of unordered frames (identity, attribute, "
    "location, scene, one-shot action).\n"
    "Question. {question}\n"
    "Return. Single-line JSON with fields: qtype (\"static\" or \"dynamic\"), rationale "
    "(1–2 short phrases; no extra text).\n";

constexpr std::string_view kSummarize =
    "Role. Summarize chronologically ordered frame notes into a compact global caption. Do not "
    "invent facts.\n"
    "Input. Frame-wise notes (earlier → later):\n"
    "{notes}\n"
    "Write. One global caption (2–4 sentences) that connects multiple frames, focusing on: "
    "(1) moving entities with consistent appearance and actions across time; "
    "(2) static scene objects and their states; "
    "(3) temporal hints only if explicitly evidenced (e.g., “then”, “later”, "
    "“repeatedly”). "
    "Style: terse and factual; no bullet lists, storytelling, or frame-by-frame recitation.\n";

constexpr std::string_view kEvaluate =
    "Role. Precise evaluator for video-QA. Return a single-line JSON only (no Markdown/code).\n"
    "Keys. score (float 0..1), verdict (\"accept\" if score ≥ 0.7 else \"reject\"), "
    "brief_reason (1–2 short bullets).\n"
    "Example user. {one_shot_user}\n"
    "Example assistant. {one_shot_assistant}\n"
    "Your task. Given the current case, output the JSON only.\n"
    "Current case.\n"
    "Question: {question}\n"
    "Global caption: {global_caption}\n"
    "Answer: {answer}\n";

constexpr std::string_view kReflect =
    "Role. Reflector in a video-understanding pipeline. You receive the question, a global "
    "caption (from 16 uniformly sampled frames), the last answer (low confidence/rejected), and "
    "its evaluation JSON.\n"
    "Objective. Analyze why the answer likely fails (missing object, wrong span, ambiguity, "
    "etc.) and produce a single short declarative retrieval text for the next round of keyframe "
    "selection.\n"
    "Strict rules. "
    "(1) Output JSON only with key refined_query. "
    "(2) refined_query ≤ 25 tokens, declarative statement (not a question), capturing "
    "disambiguating cues (entities, attributes, actions, temporal hints, viewpoint). "
    "(3) If confidence is already good (score ≥ 0.7 or verdict=\"accept\"), return an empty "
    "string. "
    "(4) Prefer concrete visual cues (colors, clothing, object names, motion phase, timestamps, "
    "left/right, first/last). "
    "(5) No speculation or unseen entities.\n"
    "Inputs.\n"
    "Question: {question}\n"
    "Global caption: {global_caption}\n"
    "Last answer: {last_answer}\n"
    "Evaluation JSON: {eval_json}\n"
    "Return. {\"refined_query\": \"...\"}\n";

constexpr std::string_view kFrameNote =
    "Role. Assist video understanding via per-frame analysis. Describe the main objects and "
    "actions in this single frame concisely.\n"
    "Focus. "
    "(1) Living entities: distinct entities (appearance, clothing, color, species), likely "
    "roles, and what each is doing (verb phrases). "
    "(2) Static objects & scene: salient items and states (color, shape, on/off, open/closed, "
    "broken/intact), plus scene context (indoor/outdoor, location hints).\n"
    "Style. Specific but brief; no speculation; 2–4 short sentences.\n"
    "Frame: {frame_ref}\n";

constexpr std::string_view kGlobalAnswer =
    "Role. Answer concisely using only the question and the global video caption.\n"
    "Inputs.\n"
    "Question: {question}\n"
    "Global caption (may miss fine details): {global_caption}\n"
    "Instruction. Produce one short answer (1–2 sentences). If information is "
    "insufficient, reply: “Not enough evidence from global caption.”\n";

constexpr std::string_view kAnswer =
    "Role. Answer the video question from temporally ordered keyframes and the global caption.\n"
    "Inputs.\n"
    "Question: {question}\n"
    "Global caption: {global_caption}\n"
    "Keyframes (earlier → later): {frames}\n"
    "Instruction. Produce one short answer (1–2 sentences) grounded in the listed "
    "keyframes; compare events across the keyframes in order.\n";

struct Entry {
  PromptKind kind;
  std::string_view name;
  std::string_view text;
};

constexpr std::array<Entry, 7> kTemplates{{
    {PromptKind::route, "route", kRoute},
    {PromptKind::summarize, "summarize", kSummarize},
    {PromptKind::evaluate, "evaluate", kEvaluate},
    {PromptKind::reflect, "reflect", kReflect},
    {PromptKind::frame_note, "frame_note", kFrameNote},
    {PromptKind::global_answer, "global_answer", kGlobalAnswer},
    {PromptKind::answer, "answer", kAnswer},
}};

const Entry& entry(PromptKind kind) {
  for (const auto& e : kTemplates) {
    if (e.kind == kind) return e;
  }
  throw ValidationError("unknown prompt kind");
}

bool is_name_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
}

// Length of the placeholder starting at text[pos] == '{', or 0 when the
// brace does not open a placeholder.
std::size_t placeholder_length(std::string_view text, std::size_t pos) {
  std::size_t end = pos + 1;
  while (end < text.size() && is_name_char(text[end])) ++end;
  if (end == pos + 1 || end >= text.size() || text[end] != '}') return 0;
  return end - pos + 1;
}

std::string_view first_line(std::string_view text) { return text.substr(0, text.find('\n')); }

}  // namespace

std::string_view to_string(PromptKind kind) { return entry(kind).name; }

std::optional<PromptKind> prompt_kind_from_string(std::string_view name) {
  for (const auto& e : kTemplates) {
    if (e.name == name) return e.kind;
  }
  return std::nullopt;
}

std::string_view prompt_template(PromptKind kind) { return entry(kind).text; }

std::vector<std::string> placeholders(PromptKind kind) {
  const std::string_view text = prompt_template(kind);
  std::vector<std::string> names;
  for (std::size_t pos = 0; pos < text.size(); ++pos) {
    if (text[pos] != '{') continue;
    if (const std::size_t len = placeholder_length(text, pos); len > 0) {
      std::string name(text.substr(pos + 1, len - 2));
      if (std::find(names.begin(), names.end(), name) == names.end()) names.push_back(name);
      pos += len - 1;
    }
  }
  return names;
}

std::string render_prompt(PromptKind kind, const PromptFields& fields) {
  const std::string_view text = prompt_template(kind);
  std::string out;
  out.reserve(text.size() + 256);
  for (std::size_t pos = 0; pos < text.size(); ++pos) {
    const std::size_t len = text[pos] == '{' ? placeholder_length(text, pos) : 0;
    if (len == 0) {
      out.push_back(text[pos]);
      continue;
    }
    const std::string_view name = text.substr(pos + 1, len - 2);
    const auto it = fields.find(name);
    if (it == fields.end()) {
      throw ValidationError(fmt::format("prompt '{}' is missing placeholder '{}'",
                                        to_string(kind), name));
    }
    out += it->second;
    pos += len - 1;
  }
  return out;
}

std::optional<PromptKind> classify_prompt(std::string_view prompt) {
  const std::string_view head = first_line(prompt);
  for (const auto& e : kTemplates) {
    if (head == first_line(e.text)) return e.kind;
  }
  return std::nullopt;
}

}  // namespace vidloop
