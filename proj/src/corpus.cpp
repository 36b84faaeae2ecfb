#include "xccd/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_set>

#include "xccd/util.hpp"

namespace xccd::corpus {

namespace {

std::filesystem::path find_submission_file(const std::filesystem::path& dir,
                                           const std::string& submission_id) {
    if (!std::filesystem::is_directory(dir)) return {};
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().stem() == submission_id) return entry.path();
    }
    return {};
}

}  // namespace

std::vector<Submission> load_corpus(const std::filesystem::path& root,
                                    const std::filesystem::path& metadata_csv,
                                    const std::vector<Language>& languages) {
    const std::set<Language> lang_set(languages.begin(), languages.end());
    auto lines = read_lines(metadata_csv);
    if (lines.empty()) throw DataError("empty metadata table: " + metadata_csv.string());

    auto header = split(lines.front(), ',');
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) col[trim(header[i])] = i;
    for (const char* required : {"submission_id", "problem_id", "language", "status"}) {
        if (!col.count(required)) {
            throw DataError(std::string("metadata table missing column: ") + required);
        }
    }

    std::vector<Submission> out;
    for (std::size_t li = 1; li < lines.size(); ++li) {
        if (trim(lines[li]).empty()) continue;
        auto cells = split(lines[li], ',');
        if (cells.size() < header.size()) {
            throw DataError("malformed metadata row " + std::to_string(li + 1));
        }
        Submission s;
        s.submission_id = trim(cells[col["submission_id"]]);
        s.problem_id = trim(cells[col["problem_id"]]);
        s.language = lower(trim(cells[col["language"]]));
        s.status = trim(cells[col["status"]]);
        if (!lang_set.count(s.language)) {
            throw DataError("submission " + s.submission_id + " uses undeclared language '" +
                            s.language + "'");
        }
        auto file = find_submission_file(root / s.problem_id / s.language, s.submission_id);
        if (file.empty()) {
            throw DataError("no source file for submission " + s.submission_id + " under " +
                            (root / s.problem_id / s.language).string());
        }
        s.source_text = read_file(file);
        if (s.source_text.empty()) {
            throw DataError("empty source file for submission " + s.submission_id);
        }
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<Submission> filter_accepted(const std::vector<Submission>& submissions) {
    std::vector<Submission> out;
    out.reserve(submissions.size());
    for (const auto& s : submissions) {
        if (s.accepted()) out.push_back(s);
    }
    return out;
}

namespace {

std::string pair_content_key(const std::string& code1, const std::string& code2) {
    std::uint64_t h = fnv1a(code1);
    h = fnv1a("\x1f", h);
    h = fnv1a(code2, h);
    return hex64(h);
}

std::string make_pair_id(const Submission& a, const Submission& b) {
    std::uint64_t h = fnv1a(a.problem_id);
    h = fnv1a("|", h);
    h = fnv1a(a.submission_id, h);
    h = fnv1a("|", h);
    h = fnv1a(b.problem_id, h);
    h = fnv1a("|", h);
    h = fnv1a(b.submission_id, h);
    return "pair-" + hex64(h);
}

CodePair make_pair(const Submission& a, const Submission& b) {
    CodePair p;
    p.pair_id = make_pair_id(a, b);
    p.code1 = a.source_text;
    p.code2 = b.source_text;
    p.lang1 = a.language;
    p.lang2 = b.language;
    p.problem1 = a.problem_id;
    p.problem2 = b.problem_id;
    p.label = (a.problem_id == b.problem_id) ? 1 : 0;
    return p;
}

}  // namespace

std::vector<CodePair> build_pairs(const std::vector<Submission>& valid,
                                  const std::pair<Language, Language>& lang_pair, std::size_t n,
                                  std::uint64_t seed, const PairOptions& opts) {
    if (n % 2 != 0) throw std::invalid_argument("build_pairs: n must be even");
    if (lang_pair.first == lang_pair.second) {
        throw std::invalid_argument("build_pairs: languages must differ");
    }

    auto fits = [&](const Submission& s) {
        if (!opts.snippet_token_cap) return true;
        if (!opts.token_count) return true;
        return opts.token_count(s.source_text) <= *opts.snippet_token_cap;
    };

    // problem -> submissions per side, sorted for determinism.
    std::map<std::string, std::vector<const Submission*>> side1, side2;
    for (const auto& s : valid) {
        if (!fits(s)) continue;
        if (s.language == lang_pair.first) side1[s.problem_id].push_back(&s);
        if (s.language == lang_pair.second) side2[s.problem_id].push_back(&s);
    }
    auto by_id = [](const Submission* a, const Submission* b) {
        return a->submission_id < b->submission_id;
    };
    for (auto& [_, v] : side1) std::sort(v.begin(), v.end(), by_id);
    for (auto& [_, v] : side2) std::sort(v.begin(), v.end(), by_id);

    std::vector<std::string> shared_problems;  // problems solvable on both sides
    for (const auto& [pid, v1] : side1) {
        if (side2.count(pid)) shared_problems.push_back(pid);
    }
    std::vector<std::string> problems1, problems2;
    for (const auto& [pid, _] : side1) problems1.push_back(pid);
    for (const auto& [pid, _] : side2) problems2.push_back(pid);

    std::set<std::string> all_problems(problems1.begin(), problems1.end());
    all_problems.insert(problems2.begin(), problems2.end());
    if (shared_problems.empty() || all_problems.size() < 2) {
        throw InsufficientCorpus("build_pairs: need >=1 problem solved in both languages and >=2 "
                                 "distinct problems");
    }

    Rng rng(seed);
    std::unordered_set<std::string> seen_content;
    std::vector<CodePair> positives, negatives;
    const std::size_t quota = n / 2;
    const std::size_t max_attempts = 200 * n + 1000;

    std::size_t attempts = 0;
    while (positives.size() < quota) {
        if (++attempts > max_attempts) {
            throw InsufficientCorpus("build_pairs: positive quota " + std::to_string(quota) +
                                     " not reachable without duplicates");
        }
        const auto& pid = shared_problems[rng.below(shared_problems.size())];
        const auto& c1 = side1[pid];
        const auto& c2 = side2[pid];
        const Submission* a = c1[rng.below(c1.size())];
        const Submission* b = c2[rng.below(c2.size())];
        auto key = pair_content_key(a->source_text, b->source_text);
        if (!seen_content.insert(key).second) continue;
        positives.push_back(make_pair(*a, *b));
    }

    attempts = 0;
    while (negatives.size() < quota) {
        if (++attempts > max_attempts) {
            throw InsufficientCorpus("build_pairs: negative quota " + std::to_string(quota) +
                                     " not reachable without duplicates");
        }
        if (problems1.empty() || problems2.empty()) {
            throw InsufficientCorpus("build_pairs: no submissions for one language side");
        }
        const auto& p1 = problems1[rng.below(problems1.size())];
        const auto& p2 = problems2[rng.below(problems2.size())];
        if (p1 == p2) continue;
        const auto& c1 = side1[p1];
        const auto& c2 = side2[p2];
        const Submission* a = c1[rng.below(c1.size())];
        const Submission* b = c2[rng.below(c2.size())];
        auto key = pair_content_key(a->source_text, b->source_text);
        if (!seen_content.insert(key).second) continue;
        negatives.push_back(make_pair(*a, *b));
    }

    std::vector<CodePair> out;
    out.reserve(n);
    out.insert(out.end(), positives.begin(), positives.end());
    out.insert(out.end(), negatives.begin(), negatives.end());
    rng.shuffle(out);
    return out;
}

SplitResult split_sd_dd(const std::vector<CodePair>& pairs, const SplitOptions& opts) {
    if (opts.dd_fraction < 0.0 || opts.dd_fraction > 1.0) {
        throw std::invalid_argument("split_sd_dd: dd_fraction must be in [0,1]");
    }
    std::set<std::string> problem_set;
    for (const auto& p : pairs) {
        problem_set.insert(p.problem1);
        problem_set.insert(p.problem2);
    }
    if (problem_set.size() < 4) {
        throw InsufficientCorpus("split_sd_dd: need pairs drawn from >=4 distinct problems");
    }

    std::vector<std::string> problems(problem_set.begin(), problem_set.end());
    Rng rng(opts.seed);
    rng.shuffle(problems);
    const auto n_dd =
        static_cast<std::size_t>(std::llround(opts.dd_fraction * static_cast<double>(problems.size())));
    std::set<std::string> dd_pool(problems.begin(), problems.begin() + static_cast<long>(n_dd));
    std::set<std::string> train_pool(problems.begin() + static_cast<long>(n_dd), problems.end());

    std::vector<CodePair> dd_candidates, main_candidates;
    for (const auto& p : pairs) {
        const bool p1_dd = dd_pool.count(p.problem1) > 0;
        const bool p2_dd = dd_pool.count(p.problem2) > 0;
        if (p1_dd && p2_dd) {
            dd_candidates.push_back(p);
        } else if (!p1_dd && !p2_dd) {
            main_candidates.push_back(p);
        }
        // mixed pairs are dropped: they would leak DD problems into training
    }

    auto balance = [&](std::vector<CodePair>& v) {
        std::vector<CodePair> pos, neg;
        for (auto& p : v) (p.label == 1 ? pos : neg).push_back(std::move(p));
        const std::size_t m = std::min(pos.size(), neg.size());
        std::vector<CodePair> out;
        out.reserve(2 * m);
        for (std::size_t i = 0; i < m; ++i) {
            out.push_back(std::move(pos[i]));
            out.push_back(std::move(neg[i]));
        }
        return out;
    };

    rng.shuffle(dd_candidates);
    rng.shuffle(main_candidates);
    auto dd_test = balance(dd_candidates);
    auto main_balanced = balance(main_candidates);

    if (n_dd > 0 && dd_test.empty()) {
        throw InsufficientCorpus("split_sd_dd: cannot balance the DD test split");
    }
    if (main_balanced.empty()) {
        throw InsufficientCorpus("split_sd_dd: cannot balance the train/SD splits");
    }

    // main_balanced alternates pos/neg; taking an even-sized prefix keeps both
    // carved splits balanced.
    auto sd_count = static_cast<std::size_t>(
        std::llround(opts.sd_test_fraction * static_cast<double>(main_balanced.size())));
    if (sd_count % 2 != 0) --sd_count;
    if (opts.sd_test_fraction > 0.0 && sd_count == 0 && main_balanced.size() >= 4) sd_count = 2;
    if (sd_count >= main_balanced.size()) {
        throw InsufficientCorpus("split_sd_dd: SD test fraction leaves no training pairs");
    }

    SplitResult r;
    r.sd_test.assign(main_balanced.begin(), main_balanced.begin() + static_cast<long>(sd_count));
    r.train.assign(main_balanced.begin() + static_cast<long>(sd_count), main_balanced.end());
    r.dd_test = std::move(dd_test);

    r.manifest.train_problems = train_pool;
    r.manifest.dd_test_problems = dd_pool;
    for (const auto& p : r.sd_test) {
        r.manifest.sd_test_problems.insert(p.problem1);
        r.manifest.sd_test_problems.insert(p.problem2);
    }
    for (const auto& p : r.train) r.manifest.train_pair_ids.push_back(p.pair_id);
    for (const auto& p : r.sd_test) r.manifest.sd_test_pair_ids.push_back(p.pair_id);
    for (const auto& p : r.dd_test) r.manifest.dd_test_pair_ids.push_back(p.pair_id);
    return r;
}

void write_pairs_jsonl(const std::filesystem::path& path, const std::vector<CodePair>& pairs) {
    std::ostringstream out;
    for (const auto& p : pairs) {
        out << nlohmann::json(p).dump() << "\n";
    }
    write_file(path, out.str());
}

std::vector<CodePair> read_pairs_jsonl(const std::filesystem::path& path) {
    std::vector<CodePair> out;
    for (const auto& line : read_lines(path)) {
        if (trim(line).empty()) continue;
        out.push_back(nlohmann::json::parse(line).get<CodePair>());
    }
    return out;
}

}  // namespace xccd::corpus
