#include "xccd/types.hpp"

#include <stdexcept>

namespace xccd {

std::string to_string(VariantKind k) {
    switch (k) {
        case VariantKind::SR: return "SR";
        case VariantKind::SC: return "SC";
        case VariantKind::RR: return "RR";
        case VariantKind::RC: return "RC";
        case VariantKind::RRC: return "RRC";
    }
    throw std::logic_error("unknown VariantKind");
}

VariantKind variant_from_string(const std::string& s) {
    if (s == "SR") return VariantKind::SR;
    if (s == "SC") return VariantKind::SC;
    if (s == "RR") return VariantKind::RR;
    if (s == "RC") return VariantKind::RC;
    if (s == "RRC") return VariantKind::RRC;
    throw std::invalid_argument("unknown variant kind: " + s);
}

std::string to_string(Role r) {
    switch (r) {
        case Role::system: return "system";
        case Role::user: return "user";
        case Role::assistant: return "assistant";
    }
    throw std::logic_error("unknown Role");
}

Role role_from_string(const std::string& s) {
    if (s == "system") return Role::system;
    if (s == "user") return Role::user;
    if (s == "assistant") return Role::assistant;
    throw std::invalid_argument("unknown role: " + s);
}

void to_json(nlohmann::json& j, const Submission& s) {
    j = {{"submission_id", s.submission_id},
         {"problem_id", s.problem_id},
         {"language", s.language},
         {"source_text", s.source_text},
         {"status", s.status}};
}

void from_json(const nlohmann::json& j, Submission& s) {
    j.at("submission_id").get_to(s.submission_id);
    j.at("problem_id").get_to(s.problem_id);
    j.at("language").get_to(s.language);
    j.at("source_text").get_to(s.source_text);
    j.at("status").get_to(s.status);
}

void to_json(nlohmann::json& j, const CodePair& p) {
    j = {{"pair_id", p.pair_id}, {"code1", p.code1},       {"code2", p.code2},
         {"lang1", p.lang1},     {"lang2", p.lang2},       {"problem1", p.problem1},
         {"problem2", p.problem2}, {"label", p.label}};
}

void from_json(const nlohmann::json& j, CodePair& p) {
    j.at("pair_id").get_to(p.pair_id);
    j.at("code1").get_to(p.code1);
    j.at("code2").get_to(p.code2);
    j.at("lang1").get_to(p.lang1);
    j.at("lang2").get_to(p.lang2);
    j.at("problem1").get_to(p.problem1);
    j.at("problem2").get_to(p.problem2);
    j.at("label").get_to(p.label);
}

void to_json(nlohmann::json& j, const SplitManifest& m) {
    j = {{"train_problems", m.train_problems},
         {"sd_test_problems", m.sd_test_problems},
         {"dd_test_problems", m.dd_test_problems},
         {"train_pair_ids", m.train_pair_ids},
         {"sd_test_pair_ids", m.sd_test_pair_ids},
         {"dd_test_pair_ids", m.dd_test_pair_ids}};
}

void from_json(const nlohmann::json& j, SplitManifest& m) {
    j.at("train_problems").get_to(m.train_problems);
    j.at("sd_test_problems").get_to(m.sd_test_problems);
    j.at("dd_test_problems").get_to(m.dd_test_problems);
    j.at("train_pair_ids").get_to(m.train_pair_ids);
    j.at("sd_test_pair_ids").get_to(m.sd_test_pair_ids);
    j.at("dd_test_pair_ids").get_to(m.dd_test_pair_ids);
}

void to_json(nlohmann::json& j, const ChatMessage& m) {
    j = {{"role", to_string(m.role)}, {"content", m.content}};
}

void from_json(const nlohmann::json& j, ChatMessage& m) {
    m.role = role_from_string(j.at("role").get<std::string>());
    j.at("content").get_to(m.content);
}

void to_json(nlohmann::json& j, const RenderedExchange& e) {
    j = {{"messages", e.messages},
         {"loss_mode", e.loss_mode == LossMode::mask_prompt ? "mask_prompt" : "full_loss"}};
}

void from_json(const nlohmann::json& j, RenderedExchange& e) {
    j.at("messages").get_to(e.messages);
    auto mode = j.at("loss_mode").get<std::string>();
    if (mode == "mask_prompt") {
        e.loss_mode = LossMode::mask_prompt;
    } else if (mode == "full_loss") {
        e.loss_mode = LossMode::full_loss;
    } else {
        throw std::invalid_argument("unknown loss_mode: " + mode);
    }
}

void to_json(nlohmann::json& j, const TeacherTrace& t) {
    j = {{"pair_id", t.pair_id},
         {"reasoning", t.reasoning},
         {"conclusion", t.conclusion},
         {"raw", t.raw}};
    if (t.predicted_label == Verdict::invalid) {
        j["predicted_label"] = nullptr;
    } else {
        j["predicted_label"] = static_cast<int>(t.predicted_label);
    }
}

void from_json(const nlohmann::json& j, TeacherTrace& t) {
    j.at("pair_id").get_to(t.pair_id);
    j.at("reasoning").get_to(t.reasoning);
    j.at("conclusion").get_to(t.conclusion);
    j.at("raw").get_to(t.raw);
    const auto& pl = j.at("predicted_label");
    t.predicted_label = pl.is_null() ? Verdict::invalid : static_cast<Verdict>(pl.get<int>());
}

void to_json(nlohmann::json& j, const TrainingExample& e) {
    j = {{"pair_id", e.pair_id},
         {"variant", to_string(e.variant)},
         {"user_prompt", e.user_prompt},
         {"target_response", e.target_response},
         {"label", e.label}};
}

void from_json(const nlohmann::json& j, TrainingExample& e) {
    j.at("pair_id").get_to(e.pair_id);
    e.variant = variant_from_string(j.at("variant").get<std::string>());
    j.at("user_prompt").get_to(e.user_prompt);
    j.at("target_response").get_to(e.target_response);
    j.at("label").get_to(e.label);
}

}  // namespace xccd
