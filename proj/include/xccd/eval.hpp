#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "xccd/types.hpp"

namespace xccd::eval {

struct LengthMismatch : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Maps a free-form conclusion to a verdict with an ordered, case-insensitive
// rule cascade: negations fire before affirmatives so "are not clones" never
// matches the "are clones" rule. The cascade scans the last 512 characters
// first and falls back to the whole text; no rule firing yields invalid.
Verdict parse_conclusion(std::string_view text);

struct ParsedPrediction {
    std::string pair_id;
    Verdict outcome = Verdict::invalid;
};

struct ConfusionCounts {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    std::size_t tn = 0;
    std::size_t invalid_count = 0;

    std::size_t total() const { return tp + fp + fn + tn + invalid_count; }
};

// Invalid outcomes land in invalid_count only; the four cells cover parsed
// predictions.
ConfusionCounts confusion(const std::vector<Verdict>& preds, const std::vector<int>& truth);

struct Metrics {
    double precision = 0.0;  // percent
    double recall = 0.0;     // percent
    double f1 = 0.0;         // percent
};

// Precision/recall/F1 in percent over parsed counts; 0/0 cases yield 0.
Metrics metrics(const ConfusionCounts& c);

double f1_from_pr(double precision, double recall);

// 100 * (n_test - invalid) / n_test.
double response_rate(const ConfusionCounts& c, std::size_t n_test);

enum class ScaledRule {
    wrong_label,   // invalid counted as the wrong label (truth 1 -> FN, truth 0 -> FP)
    drop_invalid,  // invalid removed from numerators only (recall denominator keeps them)
};

double scaled_f1(const std::vector<Verdict>& preds, const std::vector<int>& truth,
                 ScaledRule rule = ScaledRule::wrong_label);

struct EvalReport {
    std::string run_id;
    std::string method;
    std::string backbone;
    std::string test_set;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double response_rate = 0.0;
    double scaled_f1 = 0.0;
    std::size_t n_test = 0;
    double wall_time_s = 0.0;
};

void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

EvalReport make_report(const std::string& run_id, const std::string& method,
                       const std::string& backbone, const std::string& test_set,
                       const std::vector<Verdict>& preds, const std::vector<int>& truth,
                       double wall_time_s, ScaledRule rule = ScaledRule::wrong_label);

// Human-readable comparison table. Runs sharing (method, test_set) are paired
// baseline-vs-KD by backbone suffix and get a delta column with up/down
// markers.
std::string render_comparison(const std::vector<EvalReport>& runs);

}  // namespace xccd::eval
