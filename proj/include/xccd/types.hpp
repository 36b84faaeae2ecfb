#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

namespace xccd {

// Languages are lowercase interned strings so the set stays extensible;
// membership is validated against the configured language set at ingestion.
using Language = std::string;

inline const std::vector<Language> kDefaultLanguages = {"python", "java", "rust", "ruby"};

struct Submission {
    std::string submission_id;
    std::string problem_id;
    Language language;
    std::string source_text;
    std::string status;  // "Accepted" or anything else

    bool accepted() const { return status == "Accepted"; }
};

struct CodePair {
    std::string pair_id;
    std::string code1;
    std::string code2;
    Language lang1;
    Language lang2;
    std::string problem1;
    std::string problem2;
    int label = 0;  // 1 iff problem1 == problem2
};

struct SplitManifest {
    std::set<std::string> train_problems;
    std::set<std::string> sd_test_problems;
    std::set<std::string> dd_test_problems;
    std::vector<std::string> train_pair_ids;
    std::vector<std::string> sd_test_pair_ids;
    std::vector<std::string> dd_test_pair_ids;
};

enum class Role { system, user, assistant };

struct ChatMessage {
    Role role = Role::user;
    std::string content;
};

enum class LossMode { mask_prompt, full_loss };

struct RenderedExchange {
    std::vector<ChatMessage> messages;
    LossMode loss_mode = LossMode::mask_prompt;
};

// Shared three-way label for parsed free-form decisions: 0, 1, or no decision.
enum class Verdict : int { non_clone = 0, clone = 1, invalid = 2 };

struct TeacherTrace {
    std::string pair_id;
    std::string reasoning;
    std::string conclusion;
    Verdict predicted_label = Verdict::invalid;
    std::string raw;
};

struct AgreementFlag {
    std::string pair_id;
    int delta = 0;  // 1 iff predicted_label equals ground truth
};

enum class VariantKind { SR, SC, RR, RC, RRC };

inline const std::vector<VariantKind> kAllVariants = {VariantKind::SR, VariantKind::SC,
                                                      VariantKind::RR, VariantKind::RC,
                                                      VariantKind::RRC};

std::string to_string(VariantKind k);
VariantKind variant_from_string(const std::string& s);
std::string to_string(Role r);
Role role_from_string(const std::string& s);

struct TrainingExample {
    std::string pair_id;
    std::string user_prompt;
    std::string target_response;
    VariantKind variant = VariantKind::RRC;
    int label = 0;
};

// --- JSON bindings (nlohmann ADL) ---

void to_json(nlohmann::json& j, const Submission& s);
void from_json(const nlohmann::json& j, Submission& s);
void to_json(nlohmann::json& j, const CodePair& p);
void from_json(const nlohmann::json& j, CodePair& p);
void to_json(nlohmann::json& j, const SplitManifest& m);
void from_json(const nlohmann::json& j, SplitManifest& m);
void to_json(nlohmann::json& j, const ChatMessage& m);
void from_json(const nlohmann::json& j, ChatMessage& m);
void to_json(nlohmann::json& j, const RenderedExchange& e);
void from_json(const nlohmann::json& j, RenderedExchange& e);
void to_json(nlohmann::json& j, const TeacherTrace& t);
void from_json(const nlohmann::json& j, TeacherTrace& t);
void to_json(nlohmann::json& j, const TrainingExample& e);
void from_json(const nlohmann::json& j, TrainingExample& e);

}  // namespace xccd
