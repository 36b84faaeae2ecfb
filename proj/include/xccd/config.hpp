#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "xccd/backend.hpp"
#include "xccd/stabilize.hpp"
#include "xccd/teacher.hpp"
#include "xccd/types.hpp"

namespace xccd::config {

struct PairSpec {
    Language lang1;
    Language lang2;
    std::size_t count = 0;
};

struct CorpusConfig {
    std::filesystem::path root;
    std::filesystem::path metadata_csv;
    std::vector<Language> languages = kDefaultLanguages;
    std::optional<std::size_t> snippet_token_cap;
};

struct SplitConfig {
    double dd_fraction = 0.25;
    double sd_test_fraction = 0.1;
};

struct MockTeacherConfig {
    std::size_t disagree_every = 0;
    std::size_t fail_every = 0;
};

struct TeacherConfig {
    std::string kind = "mock";  // "mock" or "http"
    std::string endpoint;
    std::string model;
    std::string credential_env = "TEACHER_API_KEY";
    teacher::ClientPolicy policy;
    MockTeacherConfig mock;
};

struct PromptingConfig {
    std::optional<std::string> system_prompt;  // free slot; null disables
    LossMode loss_mode = LossMode::mask_prompt;
};

struct BackendConfig {
    std::string kind = "toy";
    nlohmann::json params = nlohmann::json::object();
};

struct HeadConfig {
    std::string objective = "bce";  // "bce" or "joint"
    std::string backbone = "kd";    // "base" or "kd" (requires a trained adapter)
    stabilize::ContrastiveConfig contrastive;
    double dropout = 0.1;
    int epochs = 40;
    int batch_size = 8;
    double learning_rate = 1e-2;
    std::uint64_t seed = 42;
};

struct EvalConfig {
    std::vector<std::string> test_sets = {"sd", "dd"};
    std::vector<std::string> methods = {"generation", "forced_conclusion", "binary_head",
                                        "contrastive_head"};
    std::string backbone = "kd";  // "base" or "kd"
    int max_new_tokens = 3000;
    bool stable_timings = false;  // write wall_time_s as 0 for byte-stable reports
    std::string scaled_f1_rule = "wrong_label";  // or "drop_invalid"
    bool parallel = true;
    std::optional<std::size_t> limit;  // evaluate at most this many pairs per set
};

struct RunConfig {
    std::string run_id = "default";
    std::filesystem::path output_root = "out";
    std::uint64_t seed = 42;

    CorpusConfig corpus;
    std::vector<PairSpec> pairs;
    SplitConfig split;
    TeacherConfig teacher;
    std::vector<VariantKind> variants = {VariantKind::RRC};
    PromptingConfig prompting;
    BackendConfig backend;
    backend::LoraConfig adapter;
    backend::TrainConfig train;
    double train_val_fraction = 0.1;
    std::string train_variant = "RRC";
    HeadConfig head;
    EvalConfig eval;

    std::filesystem::path run_dir() const { return output_root / "runs" / run_id; }
};

RunConfig load_config(const std::filesystem::path& path);
RunConfig parse_config(const nlohmann::json& j);
nlohmann::json dump_config(const RunConfig& cfg);

// Structural validation plus filesystem checks; throws ConfigError.
void validate(const RunConfig& cfg, bool check_paths = true);

}  // namespace xccd::config
