#include "xccd/config.hpp"

#include <algorithm>
#include <set>

#include "xccd/util.hpp"

namespace xccd::config {

namespace {

template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key) && !j.at(key).is_null()) j.at(key).get_to(out);
}

void maybe_path(const nlohmann::json& j, const char* key, std::filesystem::path& out) {
    if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<std::string>();
}

}  // namespace

RunConfig parse_config(const nlohmann::json& j) {
    RunConfig cfg;
    maybe(j, "run_id", cfg.run_id);
    maybe_path(j, "output_root", cfg.output_root);
    maybe(j, "seed", cfg.seed);

    if (j.contains("corpus")) {
        const auto& c = j.at("corpus");
        maybe_path(c, "root", cfg.corpus.root);
        maybe_path(c, "metadata_csv", cfg.corpus.metadata_csv);
        maybe(c, "languages", cfg.corpus.languages);
        if (c.contains("snippet_token_cap") && !c.at("snippet_token_cap").is_null()) {
            cfg.corpus.snippet_token_cap = c.at("snippet_token_cap").get<std::size_t>();
        }
    }
    if (j.contains("pairs")) {
        for (const auto& p : j.at("pairs")) {
            PairSpec spec;
            spec.lang1 = lower(p.at("lang1").get<std::string>());
            spec.lang2 = lower(p.at("lang2").get<std::string>());
            spec.count = p.at("count").get<std::size_t>();
            cfg.pairs.push_back(spec);
        }
    }
    if (j.contains("split")) {
        maybe(j.at("split"), "dd_fraction", cfg.split.dd_fraction);
        maybe(j.at("split"), "sd_test_fraction", cfg.split.sd_test_fraction);
    }
    if (j.contains("teacher")) {
        const auto& t = j.at("teacher");
        maybe(t, "kind", cfg.teacher.kind);
        maybe(t, "endpoint", cfg.teacher.endpoint);
        maybe(t, "model", cfg.teacher.model);
        maybe(t, "credential_env", cfg.teacher.credential_env);
        if (t.contains("policy")) {
            const auto& p = t.at("policy");
            maybe(p, "max_in_flight", cfg.teacher.policy.max_in_flight);
            maybe(p, "requests_per_minute", cfg.teacher.policy.requests_per_minute);
            maybe(p, "max_retries", cfg.teacher.policy.max_retries);
            if (p.contains("backoff_initial_ms")) {
                cfg.teacher.policy.backoff_initial =
                    std::chrono::milliseconds(p.at("backoff_initial_ms").get<long long>());
            }
            maybe(p, "backoff_multiplier", cfg.teacher.policy.backoff_multiplier);
        }
        if (t.contains("mock")) {
            maybe(t.at("mock"), "disagree_every", cfg.teacher.mock.disagree_every);
            maybe(t.at("mock"), "fail_every", cfg.teacher.mock.fail_every);
        }
    }
    if (j.contains("variants")) {
        cfg.variants.clear();
        for (const auto& v : j.at("variants")) {
            cfg.variants.push_back(variant_from_string(v.get<std::string>()));
        }
    }
    if (j.contains("prompting")) {
        const auto& p = j.at("prompting");
        if (p.contains("system_prompt") && !p.at("system_prompt").is_null()) {
            cfg.prompting.system_prompt = p.at("system_prompt").get<std::string>();
        }
        if (p.contains("loss_mode")) {
            const auto mode = p.at("loss_mode").get<std::string>();
            if (mode == "mask_prompt") {
                cfg.prompting.loss_mode = LossMode::mask_prompt;
            } else if (mode == "full_loss") {
                cfg.prompting.loss_mode = LossMode::full_loss;
            } else {
                throw ConfigError("prompting.loss_mode must be mask_prompt or full_loss");
            }
        }
    }
    if (j.contains("backend")) {
        const auto& b = j.at("backend");
        maybe(b, "kind", cfg.backend.kind);
        std::size_t blocks = 0;
        for (const auto& [key, val] : b.items()) {
            if (key == "kind") continue;
            ++blocks;
            if (key != cfg.backend.kind) {
                throw ConfigError("backend: parameter block '" + key +
                                  "' does not match backend.kind '" + cfg.backend.kind + "'");
            }
            cfg.backend.params = val;
        }
        if (blocks > 1) {
            throw ConfigError("backend: exactly one backend parameter block is allowed");
        }
    }
    if (j.contains("adapter")) {
        const auto& a = j.at("adapter");
        maybe(a, "rank", cfg.adapter.rank);
        maybe(a, "alpha", cfg.adapter.alpha);
        maybe(a, "dropout", cfg.adapter.dropout);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        maybe(t, "epochs", cfg.train.epochs);
        maybe(t, "per_device_batch", cfg.train.per_device_batch);
        maybe(t, "grad_accum", cfg.train.grad_accum);
        maybe(t, "learning_rate", cfg.train.learning_rate);
        maybe(t, "warmup_ratio", cfg.train.warmup_ratio);
        maybe(t, "schedule", cfg.train.schedule);
        maybe(t, "seed", cfg.train.seed);
        maybe(t, "val_fraction", cfg.train_val_fraction);
        maybe(t, "variant", cfg.train_variant);
    }
    if (j.contains("head")) {
        const auto& h = j.at("head");
        maybe(h, "objective", cfg.head.objective);
        maybe(h, "backbone", cfg.head.backbone);
        maybe(h, "lambda", cfg.head.contrastive.lambda);
        maybe(h, "tau", cfg.head.contrastive.tau);
        maybe(h, "dropout", cfg.head.dropout);
        maybe(h, "epochs", cfg.head.epochs);
        maybe(h, "batch_size", cfg.head.batch_size);
        maybe(h, "learning_rate", cfg.head.learning_rate);
        maybe(h, "seed", cfg.head.seed);
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        maybe(e, "test_sets", cfg.eval.test_sets);
        maybe(e, "methods", cfg.eval.methods);
        maybe(e, "backbone", cfg.eval.backbone);
        maybe(e, "max_new_tokens", cfg.eval.max_new_tokens);
        maybe(e, "stable_timings", cfg.eval.stable_timings);
        maybe(e, "scaled_f1_rule", cfg.eval.scaled_f1_rule);
        maybe(e, "parallel", cfg.eval.parallel);
        if (e.contains("limit") && !e.at("limit").is_null()) {
            cfg.eval.limit = e.at("limit").get<std::size_t>();
        }
    }
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    auto j = nlohmann::json::parse(read_file(path), nullptr, false);
    if (j.is_discarded()) throw ConfigError("config is not valid JSON: " + path.string());
    return parse_config(j);
}

nlohmann::json dump_config(const RunConfig& cfg) {
    nlohmann::json j;
    j["run_id"] = cfg.run_id;
    j["output_root"] = cfg.output_root.string();
    j["seed"] = cfg.seed;
    j["corpus"] = {{"root", cfg.corpus.root.string()},
                   {"metadata_csv", cfg.corpus.metadata_csv.string()},
                   {"languages", cfg.corpus.languages}};
    if (cfg.corpus.snippet_token_cap) {
        j["corpus"]["snippet_token_cap"] = *cfg.corpus.snippet_token_cap;
    }
    j["pairs"] = nlohmann::json::array();
    for (const auto& p : cfg.pairs) {
        j["pairs"].push_back({{"lang1", p.lang1}, {"lang2", p.lang2}, {"count", p.count}});
    }
    j["split"] = {{"dd_fraction", cfg.split.dd_fraction},
                  {"sd_test_fraction", cfg.split.sd_test_fraction}};
    j["teacher"] = {{"kind", cfg.teacher.kind},
                    {"endpoint", cfg.teacher.endpoint},
                    {"model", cfg.teacher.model},
                    {"credential_env", cfg.teacher.credential_env},
                    {"policy",
                     {{"max_in_flight", cfg.teacher.policy.max_in_flight},
                      {"requests_per_minute", cfg.teacher.policy.requests_per_minute},
                      {"max_retries", cfg.teacher.policy.max_retries},
                      {"backoff_initial_ms", cfg.teacher.policy.backoff_initial.count()},
                      {"backoff_multiplier", cfg.teacher.policy.backoff_multiplier}}},
                    {"mock",
                     {{"disagree_every", cfg.teacher.mock.disagree_every},
                      {"fail_every", cfg.teacher.mock.fail_every}}}};
    j["variants"] = nlohmann::json::array();
    for (auto v : cfg.variants) j["variants"].push_back(to_string(v));
    j["prompting"] = {{"loss_mode", cfg.prompting.loss_mode == LossMode::mask_prompt
                                        ? "mask_prompt"
                                        : "full_loss"}};
    if (cfg.prompting.system_prompt) {
        j["prompting"]["system_prompt"] = *cfg.prompting.system_prompt;
    } else {
        j["prompting"]["system_prompt"] = nullptr;
    }
    j["backend"] = {{"kind", cfg.backend.kind}, {cfg.backend.kind, cfg.backend.params}};
    j["adapter"] = {{"rank", cfg.adapter.rank},
                    {"alpha", cfg.adapter.alpha},
                    {"dropout", cfg.adapter.dropout}};
    j["train"] = {{"epochs", cfg.train.epochs},
                  {"per_device_batch", cfg.train.per_device_batch},
                  {"grad_accum", cfg.train.grad_accum},
                  {"learning_rate", cfg.train.learning_rate},
                  {"warmup_ratio", cfg.train.warmup_ratio},
                  {"schedule", cfg.train.schedule},
                  {"seed", cfg.train.seed},
                  {"val_fraction", cfg.train_val_fraction},
                  {"variant", cfg.train_variant}};
    j["head"] = {{"objective", cfg.head.objective},
                 {"backbone", cfg.head.backbone},
                 {"lambda", cfg.head.contrastive.lambda},
                 {"tau", cfg.head.contrastive.tau},
                 {"dropout", cfg.head.dropout},
                 {"epochs", cfg.head.epochs},
                 {"batch_size", cfg.head.batch_size},
                 {"learning_rate", cfg.head.learning_rate},
                 {"seed", cfg.head.seed}};
    j["eval"] = {{"test_sets", cfg.eval.test_sets},
                 {"methods", cfg.eval.methods},
                 {"backbone", cfg.eval.backbone},
                 {"max_new_tokens", cfg.eval.max_new_tokens},
                 {"stable_timings", cfg.eval.stable_timings},
                 {"scaled_f1_rule", cfg.eval.scaled_f1_rule},
                 {"parallel", cfg.eval.parallel}};
    if (cfg.eval.limit) j["eval"]["limit"] = *cfg.eval.limit;
    return j;
}

void validate(const RunConfig& cfg, bool check_paths) {
    if (cfg.run_id.empty()) throw ConfigError("run_id must be non-empty");
    if (cfg.pairs.empty()) throw ConfigError("at least one pair spec is required");
    std::set<Language> langs(cfg.corpus.languages.begin(), cfg.corpus.languages.end());
    for (const auto& p : cfg.pairs) {
        if (p.count == 0 || p.count % 2 != 0) {
            throw ConfigError("pair count for " + p.lang1 + "-" + p.lang2 +
                              " must be even and positive");
        }
        if (p.lang1 == p.lang2) throw ConfigError("pair languages must differ");
        if (!langs.count(p.lang1) || !langs.count(p.lang2)) {
            throw ConfigError("pair languages must be declared in corpus.languages");
        }
    }
    if (cfg.split.dd_fraction < 0.0 || cfg.split.dd_fraction > 1.0) {
        throw ConfigError("split.dd_fraction must be in [0,1]");
    }
    if (cfg.teacher.kind != "mock" && cfg.teacher.kind != "http") {
        throw ConfigError("teacher.kind must be mock or http");
    }
    if (cfg.teacher.kind == "http" && cfg.teacher.endpoint.empty()) {
        throw ConfigError("teacher.endpoint is required for the http teacher");
    }
    if (cfg.teacher.policy.max_in_flight < 1) {
        throw ConfigError("teacher.policy.max_in_flight must be >= 1");
    }
    const auto known = backend::registered_backends();
    if (std::find(known.begin(), known.end(), cfg.backend.kind) == known.end()) {
        std::string names;
        for (const auto& k : known) {
            if (!names.empty()) names += ", ";
            names += k;
        }
        throw ConfigError("backend.kind '" + cfg.backend.kind + "' is not registered (" + names +
                          ")");
    }
    if (cfg.adapter.rank < 1) throw ConfigError("adapter.rank must be >= 1");
    if (cfg.train.learning_rate <= 0.0) throw ConfigError("train.learning_rate must be > 0");
    if (cfg.train.epochs < 0) throw ConfigError("train.epochs must be >= 0");
    if (cfg.head.objective != "bce" && cfg.head.objective != "joint") {
        throw ConfigError("head.objective must be bce or joint");
    }
    if (cfg.head.backbone != "base" && cfg.head.backbone != "kd") {
        throw ConfigError("head.backbone must be base or kd");
    }
    if (cfg.eval.backbone != "base" && cfg.eval.backbone != "kd") {
        throw ConfigError("eval.backbone must be base or kd");
    }
    if (cfg.head.contrastive.tau <= 0.0) throw ConfigError("head.tau must be > 0");
    if (cfg.head.contrastive.lambda < 0.0) throw ConfigError("head.lambda must be >= 0");
    if (cfg.eval.scaled_f1_rule != "wrong_label" && cfg.eval.scaled_f1_rule != "drop_invalid") {
        throw ConfigError("eval.scaled_f1_rule must be wrong_label or drop_invalid");
    }
    for (const auto& m : cfg.eval.methods) {
        if (m != "generation" && m != "forced_conclusion" && m != "binary_head" &&
            m != "contrastive_head") {
            throw ConfigError("unknown eval method: " + m);
        }
    }
    if (check_paths) {
        if (!std::filesystem::exists(cfg.corpus.root)) {
            throw ConfigError("corpus.root does not exist: " + cfg.corpus.root.string());
        }
        if (!std::filesystem::exists(cfg.corpus.metadata_csv)) {
            throw ConfigError("corpus.metadata_csv does not exist: " +
                              cfg.corpus.metadata_csv.string());
        }
    }
}

}  // namespace xccd::config
