#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "xccd/types.hpp"

namespace xccd::variants {

struct EmptyTrace : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Builds one training example per retained (pair, trace), order-preserving:
//   SR  = simple prompt    -> reasoning
//   SC  = simple prompt    -> conclusion
//   RR  = reasoning prompt -> reasoning
//   RC  = reasoning prompt -> conclusion
//   RRC = reasoning prompt -> reasoning + separator + conclusion
std::vector<TrainingExample> build_variant(
    const std::vector<std::pair<CodePair, TeacherTrace>>& retained, VariantKind kind);

// Splits back an RRC target at the separator; throws EmptyTrace if absent.
std::pair<std::string, std::string> split_rrc_target(const std::string& target);

struct TrainValSplit {
    std::vector<TrainingExample> train;
    std::vector<TrainingExample> val;
};

// 90/10 split with a seeded shuffle.
TrainValSplit train_val_split(const std::vector<TrainingExample>& examples,
                              double val_fraction = 0.1, std::uint64_t seed = 42);

void write_examples_jsonl(const std::filesystem::path& path,
                          const std::vector<TrainingExample>& examples);
std::vector<TrainingExample> read_examples_jsonl(const std::filesystem::path& path);

}  // namespace xccd::variants
