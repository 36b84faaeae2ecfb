#include "xccd/eval.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <regex>
#include <sstream>

namespace xccd::eval {

namespace {

const std::array<std::regex, 6>& negation_rules() {
    static const std::array<std::regex, 6> rules = {
        std::regex(R"(are\s+not\s+code\s+clones)", std::regex::icase),
        std::regex(R"(are\s+not\s+clones)", std::regex::icase),
        std::regex(R"(not\s+(code\s+)?clones)", std::regex::icase),
        std::regex(R"(not\s+a\s+clone)", std::regex::icase),
        std::regex(R"(non[- ]clone)", std::regex::icase),
        std::regex(R"(\bno\b)", std::regex::icase),
    };
    return rules;
}

const std::array<std::regex, 5>& affirmative_rules() {
    static const std::array<std::regex, 5> rules = {
        std::regex(R"(are\s+code\s+clones)", std::regex::icase),
        std::regex(R"(are\s+clones)", std::regex::icase),
        std::regex(R"(is\s+a\s+clone)", std::regex::icase),
        std::regex(R"(clone\s+pair)", std::regex::icase),
        std::regex(R"(\byes\b)", std::regex::icase),
    };
    return rules;
}

Verdict apply_rules(std::string_view region) {
    for (const auto& re : negation_rules()) {
        if (std::regex_search(region.begin(), region.end(), re)) return Verdict::non_clone;
    }
    for (const auto& re : affirmative_rules()) {
        if (std::regex_search(region.begin(), region.end(), re)) return Verdict::clone;
    }
    return Verdict::invalid;
}

constexpr std::size_t kConclusionRegion = 512;

}  // namespace

Verdict parse_conclusion(std::string_view text) {
    if (text.size() > kConclusionRegion) {
        Verdict v = apply_rules(text.substr(text.size() - kConclusionRegion));
        if (v != Verdict::invalid) return v;
    }
    return apply_rules(text);
}

ConfusionCounts confusion(const std::vector<Verdict>& preds, const std::vector<int>& truth) {
    if (preds.size() != truth.size()) {
        throw LengthMismatch("confusion: preds and truth differ in length");
    }
    ConfusionCounts c;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] == Verdict::invalid) {
            ++c.invalid_count;
        } else if (truth[i] == 1) {
            preds[i] == Verdict::clone ? ++c.tp : ++c.fn;
        } else {
            preds[i] == Verdict::clone ? ++c.fp : ++c.tn;
        }
    }
    return c;
}

double f1_from_pr(double precision, double recall) {
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

Metrics metrics(const ConfusionCounts& c) {
    Metrics m;
    const double tp = static_cast<double>(c.tp);
    if (c.tp + c.fp > 0) m.precision = 100.0 * tp / static_cast<double>(c.tp + c.fp);
    if (c.tp + c.fn > 0) m.recall = 100.0 * tp / static_cast<double>(c.tp + c.fn);
    m.f1 = f1_from_pr(m.precision, m.recall);
    return m;
}

double response_rate(const ConfusionCounts& c, std::size_t n_test) {
    if (n_test == 0) throw std::invalid_argument("response_rate: n_test must be > 0");
    const auto parsed = n_test - c.invalid_count;
    return (100.0 * static_cast<double>(parsed)) / static_cast<double>(n_test);
}

double scaled_f1(const std::vector<Verdict>& preds, const std::vector<int>& truth,
                 ScaledRule rule) {
    if (preds.size() != truth.size()) {
        throw LengthMismatch("scaled_f1: preds and truth differ in length");
    }
    ConfusionCounts c;
    std::size_t invalid_positives = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] == Verdict::invalid) {
            if (rule == ScaledRule::wrong_label) {
                truth[i] == 1 ? ++c.fn : ++c.fp;
            } else if (truth[i] == 1) {
                ++invalid_positives;
            }
        } else if (truth[i] == 1) {
            preds[i] == Verdict::clone ? ++c.tp : ++c.fn;
        } else {
            preds[i] == Verdict::clone ? ++c.fp : ++c.tn;
        }
    }
    if (rule == ScaledRule::wrong_label) return metrics(c).f1;
    double precision = 0.0;
    double recall = 0.0;
    if (c.tp + c.fp > 0) precision = 100.0 * static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    const auto recall_den = c.tp + c.fn + invalid_positives;
    if (recall_den > 0) recall = 100.0 * static_cast<double>(c.tp) / static_cast<double>(recall_den);
    return f1_from_pr(precision, recall);
}

void to_json(nlohmann::json& j, const EvalReport& r) {
    j = {{"run_id", r.run_id},
         {"method", r.method},
         {"backbone", r.backbone},
         {"test_set", r.test_set},
         {"precision", r.precision},
         {"recall", r.recall},
         {"f1", r.f1},
         {"response_rate", r.response_rate},
         {"scaled_f1", r.scaled_f1},
         {"n_test", r.n_test},
         {"wall_time_s", r.wall_time_s}};
}

void from_json(const nlohmann::json& j, EvalReport& r) {
    j.at("run_id").get_to(r.run_id);
    j.at("method").get_to(r.method);
    j.at("backbone").get_to(r.backbone);
    j.at("test_set").get_to(r.test_set);
    j.at("precision").get_to(r.precision);
    j.at("recall").get_to(r.recall);
    j.at("f1").get_to(r.f1);
    j.at("response_rate").get_to(r.response_rate);
    j.at("scaled_f1").get_to(r.scaled_f1);
    j.at("n_test").get_to(r.n_test);
    j.at("wall_time_s").get_to(r.wall_time_s);
}

EvalReport make_report(const std::string& run_id, const std::string& method,
                       const std::string& backbone, const std::string& test_set,
                       const std::vector<Verdict>& preds, const std::vector<int>& truth,
                       double wall_time_s, ScaledRule rule) {
    EvalReport r;
    r.run_id = run_id;
    r.method = method;
    r.backbone = backbone;
    r.test_set = test_set;
    const auto c = confusion(preds, truth);
    const auto m = metrics(c);
    r.precision = m.precision;
    r.recall = m.recall;
    r.f1 = m.f1;
    r.response_rate = response_rate(c, preds.size());
    r.scaled_f1 = scaled_f1(preds, truth, rule);
    r.n_test = preds.size();
    r.wall_time_s = wall_time_s;
    return r;
}

namespace {

std::string fmt(double v, int width = 7) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%*.2f", width, v);
    return buf;
}

}  // namespace

std::string render_comparison(const std::vector<EvalReport>& runs) {
    std::ostringstream out;
    out << "method               test_set      backbone                  "
           "   prec  recall      f1   resp%  scaled      n  wall_s   dF1\n";
    // First run of each (method, test_set) group is the reference row;
    // later rows get a delta against it, triangle up for gains.
    std::vector<std::pair<std::string, double>> reference;
    for (const auto& r : runs) {
        const std::string key = r.method + "|" + r.test_set;
        double base_f1 = 0.0;
        bool have_base = false;
        for (const auto& [k, f] : reference) {
            if (k == key) {
                base_f1 = f;
                have_base = true;
                break;
            }
        }
        std::string backbone = r.backbone;
        if (backbone.size() > 28) backbone = backbone.substr(0, 25) + "...";
        char line[256];
        std::snprintf(line, sizeof(line), "%-20s %-13s %-28s", r.method.c_str(),
                      r.test_set.c_str(), backbone.c_str());
        out << line << fmt(r.precision) << fmt(r.recall, 8) << fmt(r.f1, 8)
            << fmt(r.response_rate, 8) << fmt(r.scaled_f1, 8);
        std::snprintf(line, sizeof(line), "%7zu", r.n_test);
        out << line << fmt(r.wall_time_s, 8);
        if (have_base) {
            const double d = r.f1 - base_f1;
            char dbuf[32];
            std::snprintf(dbuf, sizeof(dbuf), " %+6.2f %s", d,
                          d > 0 ? "▲" : (d < 0 ? "▼" : "="));
            out << dbuf;
        } else {
            reference.emplace_back(key, r.f1);
        }
        out << "\n";
    }
    return out.str();
}

}  // namespace xccd::eval
