#include "xccd/teacher.hpp"

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "xccd/eval.hpp"
#include "xccd/util.hpp"

namespace xccd::teacher {

// --- HTTP client ---

HttpTeacherClient::HttpTeacherClient(std::string endpoint, std::string model,
                                     std::string credential_env, std::chrono::milliseconds timeout)
    : endpoint_(std::move(endpoint)), model_(std::move(model)), timeout_(timeout) {
    const char* key = std::getenv(credential_env.c_str());
    if (key == nullptr || *key == '\0') {
        throw CredentialMissing("teacher credential env var '" + credential_env + "' is not set");
    }
    api_key_ = key;
}

CompletionResult HttpTeacherClient::complete(const std::string& prompt) {
    auto scheme_end = endpoint_.find("://");
    if (scheme_end == std::string::npos) {
        return {false, "", "malformed endpoint: " + endpoint_};
    }
    auto path_start = endpoint_.find('/', scheme_end + 3);
    const std::string base =
        path_start == std::string::npos ? endpoint_ : endpoint_.substr(0, path_start);
    const std::string path = path_start == std::string::npos ? "/" : endpoint_.substr(path_start);

    httplib::Client cli(base);
    cli.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout_));
    cli.set_read_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout_));

    nlohmann::json body = {
        {"model", model_},
        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
    };
    httplib::Headers headers = {{"Authorization", "Bearer " + api_key_}};
    auto res = cli.Post(path, headers, body.dump(), "application/json");
    if (!res) {
        return {false, "", "transport error: " + httplib::to_string(res.error())};
    }
    if (res->status != 200) {
        return {false, "", "http status " + std::to_string(res->status)};
    }
    auto j = nlohmann::json::parse(res->body, nullptr, false);
    if (j.is_discarded() || !j.contains("choices") || j["choices"].empty()) {
        return {false, "", "malformed completion payload"};
    }
    const auto& msg = j["choices"][0];
    if (msg.contains("message") && msg["message"].contains("content")) {
        return {true, msg["message"]["content"].get<std::string>(), ""};
    }
    return {false, "", "completion payload has no message content"};
}

// --- Mock client ---

MockTeacherClient::MockTeacherClient(std::vector<CodePair> pairs, Options options)
    : pairs_(std::move(pairs)), options_(options) {
    for (std::size_t i = 0; i < pairs_.size(); ++i) {
        order_[pairs_[i].pair_id] = i;
    }
}

CompletionResult MockTeacherClient::complete(const std::string& prompt) {
    const CodePair* match = nullptr;
    for (const auto& p : pairs_) {
        if (prompt.find(p.code1) != std::string::npos &&
            prompt.find(p.code2) != std::string::npos) {
            match = &p;
            break;
        }
    }
    {
        std::lock_guard<std::mutex> lk(mu_);
        ++calls_;
    }
    if (match == nullptr) {
        return {false, "", "mock teacher: prompt does not embed a known pair"};
    }
    const std::size_t idx = order_[match->pair_id];
    if (options_.fail_every > 0 && (idx + 1) % options_.fail_every == 0) {
        return {false, "", "mock teacher: scripted failure"};
    }
    int label = match->label;
    if (options_.disagree_every > 0 && (idx + 1) % options_.disagree_every == 0) {
        label = 1 - label;
    }
    nlohmann::json j = {
        {"functionality_comparison",
         "Both snippets read input and compute a result for problem-style tasks."},
        {"mathematical_logic_comparison",
         label == 1 ? "The arithmetic performed by the two snippets is the same."
                    : "The arithmetic performed by the two snippets differs."},
        {"structural_differences",
         "The implementations use language-specific io and syntax."},
        {"similarity_analysis",
         label == 1 ? "The snippets map the same inputs to the same outputs."
                    : "The snippets solve unrelated tasks."},
        {"conclusion", label == 1 ? "Yes, the two snippets are code clones."
                                  : "No, these are not clones."},
    };
    std::string text = j.dump(2);
    if (options_.fence_json) text = "```json\n" + text + "\n```";
    return {true, text, ""};
}

// --- Clocks and rate limiting ---

std::chrono::milliseconds SystemClock::now() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
        std::chrono::steady_clock::now().time_since_epoch());
}

void SystemClock::sleep_for(std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }

std::chrono::milliseconds RateLimiter::reserve(std::chrono::milliseconds now) {
    constexpr auto kWindow = std::chrono::milliseconds(60000);
    std::lock_guard<std::mutex> lk(mu_);
    if (per_minute_ == 0) return now;
    while (!window_.empty() && window_.front() + kWindow <= now) window_.pop_front();
    std::chrono::milliseconds start = now;
    if (window_.size() >= per_minute_) {
        start = window_[window_.size() - per_minute_] + kWindow;
    }
    window_.push_back(start);
    return start;
}

// --- Trace parsing ---

namespace {

const char* kTraceKeys[5] = {"functionality_comparison", "mathematical_logic_comparison",
                             "structural_differences", "similarity_analysis", "conclusion"};

std::string strip_fences(const std::string& raw) {
    auto open = raw.find("```");
    if (open == std::string::npos) return raw;
    auto body_start = raw.find('\n', open);
    if (body_start == std::string::npos) return raw;
    ++body_start;
    auto close = raw.find("```", body_start);
    if (close == std::string::npos) return raw;
    return raw.substr(body_start, close - body_start);
}

nlohmann::json try_parse_object(const std::string& text) {
    auto j = nlohmann::json::parse(text, nullptr, false);
    if (!j.is_discarded() && j.is_object()) return j;

    auto stripped = strip_fences(text);
    j = nlohmann::json::parse(stripped, nullptr, false);
    if (!j.is_discarded() && j.is_object()) return j;

    // last resort: first balanced top-level object in the text
    auto open = text.find('{');
    if (open != std::string::npos) {
        int depth = 0;
        bool in_string = false;
        for (std::size_t i = open; i < text.size(); ++i) {
            char c = text[i];
            if (in_string) {
                if (c == '\\') {
                    ++i;
                } else if (c == '"') {
                    in_string = false;
                }
                continue;
            }
            if (c == '"') in_string = true;
            if (c == '{') ++depth;
            if (c == '}' && --depth == 0) {
                j = nlohmann::json::parse(text.substr(open, i - open + 1), nullptr, false);
                if (!j.is_discarded() && j.is_object()) return j;
                break;
            }
        }
    }
    return nlohmann::json(nlohmann::json::value_t::discarded);
}

std::string field_as_text(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
}

}  // namespace

TeacherTrace parse_teacher_json(const std::string& raw) {
    TeacherTrace t;
    t.raw = raw;
    auto j = try_parse_object(raw);
    if (j.is_discarded()) return t;
    for (const char* key : kTraceKeys) {
        if (!j.contains(key)) return t;
    }
    std::string reasoning;
    for (int i = 0; i < 4; ++i) {
        if (i > 0) reasoning += "\n\n";
        reasoning += field_as_text(j[kTraceKeys[i]]);
    }
    t.reasoning = std::move(reasoning);
    t.conclusion = field_as_text(j["conclusion"]);
    t.predicted_label = extract_teacher_label(t.conclusion);
    return t;
}

Verdict extract_teacher_label(const std::string& conclusion) {
    return eval::parse_conclusion(conclusion);
}

AgreementFlag compute_agreement(const TeacherTrace& trace, const CodePair& pair) {
    AgreementFlag f;
    f.pair_id = trace.pair_id;
    f.delta = (trace.predicted_label != Verdict::invalid &&
               static_cast<int>(trace.predicted_label) == pair.label)
                  ? 1
                  : 0;
    return f;
}

std::vector<std::pair<CodePair, TeacherTrace>> filter_agreement(
    const std::vector<TeacherTrace>& traces, const std::vector<CodePair>& pairs) {
    std::map<std::string, const CodePair*> by_id;
    for (const auto& p : pairs) by_id[p.pair_id] = &p;
    std::vector<std::pair<CodePair, TeacherTrace>> out;
    for (const auto& t : traces) {
        auto it = by_id.find(t.pair_id);
        if (it == by_id.end()) {
            throw DataError("trace references unknown pair_id: " + t.pair_id);
        }
        if (compute_agreement(t, *it->second).delta == 1) {
            out.emplace_back(*it->second, t);
        }
    }
    return out;
}

// --- Ledger ---

void to_json(nlohmann::json& j, const LedgerEntry& e) {
    j = {{"pair_id", e.pair_id}, {"raw", e.raw},       {"reasoning", e.reasoning},
         {"conclusion", e.conclusion}, {"status", e.status}, {"attempts", e.attempts}};
    if (e.predicted_label == Verdict::invalid) {
        j["predicted_label"] = nullptr;
    } else {
        j["predicted_label"] = static_cast<int>(e.predicted_label);
    }
}

void from_json(const nlohmann::json& j, LedgerEntry& e) {
    j.at("pair_id").get_to(e.pair_id);
    j.at("raw").get_to(e.raw);
    j.at("reasoning").get_to(e.reasoning);
    j.at("conclusion").get_to(e.conclusion);
    j.at("status").get_to(e.status);
    j.at("attempts").get_to(e.attempts);
    const auto& pl = j.at("predicted_label");
    e.predicted_label = pl.is_null() ? Verdict::invalid : static_cast<Verdict>(pl.get<int>());
}

std::vector<LedgerEntry> read_ledger(const std::filesystem::path& ledger_path) {
    std::vector<LedgerEntry> out;
    if (!std::filesystem::exists(ledger_path)) return out;
    for (const auto& line : read_lines(ledger_path)) {
        if (trim(line).empty()) continue;
        out.push_back(nlohmann::json::parse(line).get<LedgerEntry>());
    }
    return out;
}

BatchStats run_batch(TeacherClient& client,
                     const std::vector<std::pair<std::string, std::string>>& prompts,
                     const ClientPolicy& policy, const std::filesystem::path& ledger_path,
                     Clock* clock) {
    SystemClock system_clock;
    if (clock == nullptr) clock = &system_clock;

    BatchStats stats;
    std::set<std::string> done;
    for (const auto& e : read_ledger(ledger_path)) done.insert(e.pair_id);

    std::vector<const std::pair<std::string, std::string>*> pending;
    for (const auto& p : prompts) {
        if (done.count(p.first)) {
            ++stats.skipped_resume;
        } else {
            pending.push_back(&p);
        }
    }
    stats.requested = pending.size();
    if (pending.empty()) return stats;

    if (ledger_path.has_parent_path()) {
        std::filesystem::create_directories(ledger_path.parent_path());
    }
    std::ofstream ledger(ledger_path, std::ios::app);
    if (!ledger) throw DataError("cannot open ledger for append: " + ledger_path.string());

    RateLimiter limiter(policy.requests_per_minute);
    std::mutex ledger_mu;
    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> succeeded{0};
    std::atomic<std::size_t> failed{0};

    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= pending.size()) return;
            const auto& [pair_id, prompt] = *pending[i];

            CompletionResult result;
            std::size_t attempts = 0;
            auto backoff = policy.backoff_initial;
            while (attempts < std::max<std::size_t>(policy.max_retries, 1)) {
                auto slot = limiter.reserve(clock->now());
                auto now = clock->now();
                if (slot > now) clock->sleep_for(slot - now);
                ++attempts;
                result = client.complete(prompt);
                if (result.ok) break;
                if (attempts < policy.max_retries) {
                    clock->sleep_for(backoff);
                    backoff = std::chrono::milliseconds(static_cast<long long>(
                        static_cast<double>(backoff.count()) * policy.backoff_multiplier));
                }
            }

            LedgerEntry entry;
            entry.pair_id = pair_id;
            entry.attempts = attempts;
            if (result.ok) {
                auto trace = parse_teacher_json(result.text);
                entry.raw = result.text;
                entry.reasoning = trace.reasoning;
                entry.conclusion = trace.conclusion;
                entry.predicted_label = trace.predicted_label;
                entry.status = "ok";
                ++succeeded;
            } else {
                entry.raw = result.error;
                entry.status = "failed";
                ++failed;
            }
            std::lock_guard<std::mutex> lk(ledger_mu);
            ledger << nlohmann::json(entry).dump() << std::endl;
        }
    };

    const std::size_t n_threads =
        std::min({std::max<std::size_t>(policy.max_in_flight, 1), pending.size(),
                  static_cast<std::size_t>(64)});
    std::vector<std::thread> threads;
    threads.reserve(n_threads);
    for (std::size_t i = 0; i < n_threads; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();

    stats.succeeded = succeeded;
    stats.failed = failed;
    return stats;
}

}  // namespace xccd::teacher
