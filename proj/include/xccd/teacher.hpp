#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "xccd/types.hpp"

namespace xccd::teacher {

struct CredentialMissing : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ClientPolicy {
    std::size_t max_in_flight = 8;
    std::size_t requests_per_minute = 200;
    std::size_t max_retries = 3;  // total attempts per sample
    std::chrono::milliseconds backoff_initial{1000};
    double backoff_multiplier = 2.0;
};

struct CompletionResult {
    bool ok = false;
    std::string text;   // response body on success
    std::string error;  // transport/HTTP error on failure
};

class TeacherClient {
public:
    virtual ~TeacherClient() = default;
    virtual CompletionResult complete(const std::string& prompt) = 0;
};

// Chat-completions HTTP client. The credential is read from the environment
// at construction; a missing credential is fatal.
class HttpTeacherClient : public TeacherClient {
public:
    HttpTeacherClient(std::string endpoint, std::string model, std::string credential_env,
                      std::chrono::milliseconds timeout = std::chrono::milliseconds(60000));
    CompletionResult complete(const std::string& prompt) override;

private:
    std::string endpoint_;
    std::string model_;
    std::string api_key_;
    std::chrono::milliseconds timeout_;
};

// Deterministic stand-in teacher. It recovers the pair from the prompt via a
// registered index, answers with a well-formed five-key JSON trace, and can be
// scripted to disagree with or fail every k-th request.
class MockTeacherClient : public TeacherClient {
public:
    struct Options {
        std::size_t disagree_every = 0;  // 0 disables
        std::size_t fail_every = 0;      // 0 disables
        bool fence_json = true;
    };

    MockTeacherClient(std::vector<CodePair> pairs, Options options);
    CompletionResult complete(const std::string& prompt) override;

    std::size_t calls() const { return calls_; }

private:
    std::vector<CodePair> pairs_;
    Options options_;
    std::mutex mu_;
    std::size_t calls_ = 0;
    std::map<std::string, std::size_t> order_;  // pair_id -> scripted index
};

// Injectable time source so rate limiting is testable on a scripted clock.
class Clock {
public:
    virtual ~Clock() = default;
    virtual std::chrono::milliseconds now() = 0;
    virtual void sleep_for(std::chrono::milliseconds d) = 0;
};

class SystemClock : public Clock {
public:
    std::chrono::milliseconds now() override;
    void sleep_for(std::chrono::milliseconds d) override;
};

class ManualClock : public Clock {
public:
    std::chrono::milliseconds now() override { return t_; }
    void sleep_for(std::chrono::milliseconds d) override { t_ += d; }
    void advance(std::chrono::milliseconds d) { t_ += d; }

private:
    std::chrono::milliseconds t_{0};
};

// Sliding-window limiter: at most `per_minute` reservations in any 60 s span.
// reserve(now) returns the earliest instant the caller may proceed and books
// the slot at that instant.
class RateLimiter {
public:
    explicit RateLimiter(std::size_t per_minute) : per_minute_(per_minute) {}
    std::chrono::milliseconds reserve(std::chrono::milliseconds now);

private:
    std::size_t per_minute_;
    std::mutex mu_;
    std::deque<std::chrono::milliseconds> window_;
};

struct LedgerEntry {
    std::string pair_id;
    std::string raw;
    std::string reasoning;
    std::string conclusion;
    Verdict predicted_label = Verdict::invalid;
    std::string status;  // "ok" or "failed"
    std::size_t attempts = 0;
};

void to_json(nlohmann::json& j, const LedgerEntry& e);
void from_json(const nlohmann::json& j, LedgerEntry& e);

// Splits a raw teacher response into reasoning (the four analysis fields in
// template order, blank-line separated) and conclusion. Markdown code fences
// are stripped before parsing; any failure yields an unparseable trace.
TeacherTrace parse_teacher_json(const std::string& raw);

// Shared with the eval parser by contract: one extraction rule for filtering
// and scoring.
Verdict extract_teacher_label(const std::string& conclusion);

AgreementFlag compute_agreement(const TeacherTrace& trace, const CodePair& pair);

// Retains exactly the traces whose predicted label matches ground truth;
// unparseable labels count as disagreement.
std::vector<std::pair<CodePair, TeacherTrace>> filter_agreement(
    const std::vector<TeacherTrace>& traces, const std::vector<CodePair>& pairs);

struct BatchStats {
    std::size_t requested = 0;
    std::size_t skipped_resume = 0;
    std::size_t succeeded = 0;
    std::size_t failed = 0;
};

// Runs prompts through the client under the policy: bounded in-flight
// concurrency, shared per-minute rate limit across attempts, per-sample retry
// with exponential backoff, per-sample failure isolation. Every outcome is
// appended to the JSONL ledger keyed by pair_id; pair_ids already present are
// not re-requested (crash resume).
BatchStats run_batch(TeacherClient& client, const std::vector<std::pair<std::string, std::string>>& prompts,
                     const ClientPolicy& policy, const std::filesystem::path& ledger_path,
                     Clock* clock = nullptr);

std::vector<LedgerEntry> read_ledger(const std::filesystem::path& ledger_path);

}  // namespace xccd::teacher
