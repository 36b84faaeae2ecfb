#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "xccd/types.hpp"

namespace xccd::prompts {

// Template texts are the single compile-time source of truth; the copies under
// assets/templates/ are the shipped text assets and a unit test keeps the two
// in sync.
extern const std::string_view kReasoningTemplate;          // placeholders {code1}, {code2}
extern const std::string_view kSimpleTemplate;             // placeholders {code1}, {code2}
extern const std::string_view kForcedConclusionTemplate;   // placeholder {full_response}
extern const std::string_view kDefaultSystemPrompt;
extern const std::string_view kDecisionCue;                // terminal line of the forced prompt
extern const std::string_view kRrcSeparator;               // between reasoning and conclusion

std::string render_reasoning_prompt(const CodePair& pair);
std::string render_simple_prompt(const CodePair& pair);
std::string render_forced_conclusion_prompt(std::string_view full_response);

RenderedExchange build_exchange(const std::optional<std::string>& system, const std::string& user,
                                const std::string& assistant, LossMode loss_mode);

}  // namespace xccd::prompts
