#include "xccd/prompts.hpp"

#include <stdexcept>

#include "xccd/util.hpp"

namespace xccd::prompts {

const std::string_view kReasoningTemplate =
    "Compare the following two code snippets with regard to:\n"
    "\n"
    "1. Functionality comparison\n"
    "2. Mathematical logic comparison\n"
    "3. Structural differences\n"
    "4. Similarity analysis\n"
    "5. Conclusion on clone status (codes may be in different languages)\n"
    "\n"
    "Provide the answer as a JSON object with keys\n"
    "\"functionality_comparison\", \"mathematical_logic_comparison\",\n"
    "\"structural_differences\", \"similarity_analysis\", and \"conclusion\".\n"
    "Do not include any explanation outside the JSON.\n"
    "\n"
    "Code1: {code1}\n"
    "\n"
    "Code2: {code2}\n";

const std::string_view kSimpleTemplate =
    "Are the following two code snippets code clones? Answer yes or no.\n"
    "\n"
    "Code1: {code1}\n"
    "\n"
    "Code2: {code2}\n";

const std::string_view kForcedConclusionTemplate =
    "Based on the following analysis, determine the final clone conclusion.\n"
    "- You must decide whether the two codes are clones.\n"
    "- Do not repeat the analysis. Just think internally and decide.\n"
    "- We will infer your answer from the probabilities of the next token.\n"
    "\n"
    "{full_response}\n"
    "\n"
    "- Final Answer (Yes or No):";

const std::string_view kDefaultSystemPrompt = "You are a code clone detection assistant.";

const std::string_view kDecisionCue = "- Final Answer (Yes or No):";

const std::string_view kRrcSeparator = "\n\nConclusion:\n";

namespace {

void require_nonempty(const CodePair& pair) {
    if (pair.code1.empty() || pair.code2.empty()) {
        throw std::invalid_argument("prompt rendering requires non-empty snippets");
    }
}

}  // namespace

std::string render_reasoning_prompt(const CodePair& pair) {
    require_nonempty(pair);
    return replace_once(replace_once(kReasoningTemplate, "{code1}", pair.code1), "{code2}",
                        pair.code2);
}

std::string render_simple_prompt(const CodePair& pair) {
    require_nonempty(pair);
    return replace_once(replace_once(kSimpleTemplate, "{code1}", pair.code1), "{code2}",
                        pair.code2);
}

std::string render_forced_conclusion_prompt(std::string_view full_response) {
    if (full_response.empty()) {
        throw std::invalid_argument("forced conclusion prompt requires a non-empty response");
    }
    return replace_once(kForcedConclusionTemplate, "{full_response}", full_response);
}

RenderedExchange build_exchange(const std::optional<std::string>& system, const std::string& user,
                                const std::string& assistant, LossMode loss_mode) {
    if (user.empty() || assistant.empty()) {
        throw std::invalid_argument("build_exchange: user and assistant must be non-empty");
    }
    RenderedExchange ex;
    ex.loss_mode = loss_mode;
    if (system && !system->empty()) ex.messages.push_back({Role::system, *system});
    ex.messages.push_back({Role::user, user});
    ex.messages.push_back({Role::assistant, assistant});
    return ex;
}

}  // namespace xccd::prompts
