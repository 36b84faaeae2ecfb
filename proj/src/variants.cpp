#include "xccd/variants.hpp"

#include <sstream>

#include "xccd/prompts.hpp"
#include "xccd/util.hpp"

namespace xccd::variants {

namespace {

bool needs_reasoning(VariantKind k) {
    return k == VariantKind::SR || k == VariantKind::RR || k == VariantKind::RRC;
}

bool needs_conclusion(VariantKind k) {
    return k == VariantKind::SC || k == VariantKind::RC || k == VariantKind::RRC;
}

bool uses_reasoning_prompt(VariantKind k) {
    return k == VariantKind::RR || k == VariantKind::RC || k == VariantKind::RRC;
}

}  // namespace

std::vector<TrainingExample> build_variant(
    const std::vector<std::pair<CodePair, TeacherTrace>>& retained, VariantKind kind) {
    std::vector<TrainingExample> out;
    out.reserve(retained.size());
    for (const auto& [pair, trace] : retained) {
        if (needs_reasoning(kind) && trace.reasoning.empty()) {
            throw EmptyTrace("variant " + to_string(kind) + ": empty reasoning for pair " +
                             pair.pair_id);
        }
        if (needs_conclusion(kind) && trace.conclusion.empty()) {
            throw EmptyTrace("variant " + to_string(kind) + ": empty conclusion for pair " +
                             pair.pair_id);
        }
        TrainingExample ex;
        ex.pair_id = pair.pair_id;
        ex.variant = kind;
        ex.label = pair.label;
        ex.user_prompt = uses_reasoning_prompt(kind) ? prompts::render_reasoning_prompt(pair)
                                                     : prompts::render_simple_prompt(pair);
        switch (kind) {
            case VariantKind::SR:
            case VariantKind::RR:
                ex.target_response = trace.reasoning;
                break;
            case VariantKind::SC:
            case VariantKind::RC:
                ex.target_response = trace.conclusion;
                break;
            case VariantKind::RRC:
                ex.target_response =
                    trace.reasoning + std::string(prompts::kRrcSeparator) + trace.conclusion;
                break;
        }
        out.push_back(std::move(ex));
    }
    return out;
}

std::pair<std::string, std::string> split_rrc_target(const std::string& target) {
    auto pos = target.find(prompts::kRrcSeparator);
    if (pos == std::string::npos) {
        throw EmptyTrace("RRC target has no separator");
    }
    return {target.substr(0, pos), target.substr(pos + prompts::kRrcSeparator.size())};
}

TrainValSplit train_val_split(const std::vector<TrainingExample>& examples, double val_fraction,
                              std::uint64_t seed) {
    std::vector<std::size_t> idx(examples.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(seed);
    rng.shuffle(idx);
    const auto n_val =
        static_cast<std::size_t>(val_fraction * static_cast<double>(examples.size()));
    TrainValSplit split;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        (i < n_val ? split.val : split.train).push_back(examples[idx[i]]);
    }
    return split;
}

void write_examples_jsonl(const std::filesystem::path& path,
                          const std::vector<TrainingExample>& examples) {
    std::ostringstream out;
    for (const auto& e : examples) out << nlohmann::json(e).dump() << "\n";
    write_file(path, out.str());
}

std::vector<TrainingExample> read_examples_jsonl(const std::filesystem::path& path) {
    std::vector<TrainingExample> out;
    for (const auto& line : read_lines(path)) {
        if (trim(line).empty()) continue;
        out.push_back(nlohmann::json::parse(line).get<TrainingExample>());
    }
    return out;
}

}  // namespace xccd::variants
