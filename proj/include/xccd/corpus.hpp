#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "xccd/types.hpp"

namespace xccd::corpus {

struct InsufficientCorpus : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Reads a submission tree laid out as <root>/<problem_id>/<language>/<submission_id>.<ext>
// driven by a metadata CSV with header submission_id,problem_id,language,status.
// Languages are folded to lowercase and must belong to `languages`.
std::vector<Submission> load_corpus(const std::filesystem::path& root,
                                    const std::filesystem::path& metadata_csv,
                                    const std::vector<Language>& languages);

std::vector<Submission> filter_accepted(const std::vector<Submission>& submissions);

struct PairOptions {
    // When set, snippets whose token count exceeds the cap are excluded at
    // pairing time.
    std::optional<std::size_t> snippet_token_cap;
    std::function<std::size_t(const std::string&)> token_count;
};

// Builds exactly n pairs, n/2 positive (same problem, different languages) and
// n/2 negative (different problems), content-deduplicated, deterministic in
// the seed. Throws InsufficientCorpus when either quota cannot be met.
std::vector<CodePair> build_pairs(const std::vector<Submission>& valid,
                                  const std::pair<Language, Language>& lang_pair, std::size_t n,
                                  std::uint64_t seed, const PairOptions& opts = {});

struct SplitOptions {
    double dd_fraction = 0.0;
    double sd_test_fraction = 0.1;
    std::uint64_t seed = 42;
};

struct SplitResult {
    SplitManifest manifest;
    std::vector<CodePair> train;
    std::vector<CodePair> sd_test;
    std::vector<CodePair> dd_test;
};

// Partitions the problem set into a train/SD pool and a disjoint DD pool,
// then carves label-balanced train / SD-test / DD-test pair sets. Pairs
// touching both pools are dropped so DD isolation holds.
SplitResult split_sd_dd(const std::vector<CodePair>& pairs, const SplitOptions& opts);

void write_pairs_jsonl(const std::filesystem::path& path, const std::vector<CodePair>& pairs);
std::vector<CodePair> read_pairs_jsonl(const std::filesystem::path& path);

}  // namespace xccd::corpus
