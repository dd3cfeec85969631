#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace vidloop {

/// Prompt templates for the LLM-backed roles. `answer` is the Actor's prompt;
/// the other six are the router, caption, evaluator, reflector, per-frame and
/// caption-only fallback prompts.
enum class PromptKind { route, summarize, evaluate, reflect, frame_note, global_answer, answer };

using PromptFields = std::map<std::string, std::string, std::less<>>;

std::string_view to_string(PromptKind kind);
std::optional<PromptKind> prompt_kind_from_string(std::string_view name);

/// Raw template text. Placeholders are `{name}` with name in [a-z0-9_]+.
std::string_view prompt_template(PromptKind kind);

/// Placeholder names of a template, in order of first appearance.
std::vector<std::string> placeholders(PromptKind kind);

/// Substitutes every placeholder verbatim; substituted text is not rescanned.
/// Throws ValidationError naming the first placeholder missing from `fields`.
std::string render_prompt(PromptKind kind, const PromptFields& fields);

/// Identifies which template a rendered prompt came from by its role line.
std::optional<PromptKind> classify_prompt(std::string_view prompt);

}  // namespace vidloop
