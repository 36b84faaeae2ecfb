#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "xccd/config.hpp"
#include "xccd/eval.hpp"
#include "xccd/teacher.hpp"

namespace xccd::pipeline {

struct ExternalServiceExhausted : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SeedResult {
    std::map<std::string, std::size_t> pair_counts;  // "<l1>-<l2>" -> total pairs
    std::map<std::string, std::size_t> train_counts;
    std::map<std::string, std::size_t> sd_counts;
    std::map<std::string, std::size_t> dd_counts;
    std::vector<std::filesystem::path> files;
};

SeedResult cmd_seed(const config::RunConfig& cfg);

struct DistillResult {
    teacher::BatchStats stats;
    std::map<std::string, std::size_t> seed_counts;      // per language pair
    std::map<std::string, std::size_t> retained_counts;  // per language pair
    std::size_t retained_total = 0;
    std::filesystem::path ledger_path;
    std::filesystem::path retained_path;
    std::string summary;  // retention table
};

DistillResult cmd_distill(const config::RunConfig& cfg);

struct VariantsResult {
    std::map<std::string, std::size_t> counts;  // per kind
    std::vector<std::filesystem::path> files;
};

VariantsResult cmd_variants(const config::RunConfig& cfg);

struct TrainResult {
    std::filesystem::path adapter_path;
    double base_val_loss = 0.0;
    double adapted_val_loss = 0.0;
    std::size_t train_examples = 0;
    std::size_t val_examples = 0;
};

TrainResult cmd_train(const config::RunConfig& cfg);

struct TrainHeadResult {
    std::filesystem::path head_path;
    double train_accuracy = 0.0;
    std::string backbone;
};

TrainHeadResult cmd_train_head(const config::RunConfig& cfg);

struct EvalResult {
    std::vector<eval::EvalReport> reports;
    std::filesystem::path report_path;  // combined JSON array
    std::string table;
};

EvalResult cmd_eval(const config::RunConfig& cfg);

// Merges report JSON files (arrays or single objects, in argument order) into
// one comparison table plus a combined JSON document.
std::string cmd_report(const std::vector<std::filesystem::path>& report_files,
                       const std::filesystem::path& out_json);

// Loads retained (pair, trace) rows written by cmd_distill.
std::vector<std::pair<CodePair, TeacherTrace>> read_retained(const std::filesystem::path& path);

}  // namespace xccd::pipeline
