#include "xccd/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <set>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "xccd/corpus.hpp"
#include "xccd/prompts.hpp"
#include "xccd/stabilize.hpp"
#include "xccd/util.hpp"
#include "xccd/variants.hpp"

namespace xccd::pipeline {

namespace fs = std::filesystem;

namespace {

std::string pair_key(const config::PairSpec& spec) { return spec.lang1 + "-" + spec.lang2; }

std::string pair_tag(const config::PairSpec& spec) { return spec.lang1 + "_" + spec.lang2; }

std::uint64_t derive_seed(std::uint64_t base, const std::string& tag) {
    return base ^ fnv1a(tag);
}

void write_manifest(const config::RunConfig& cfg, const std::string& command,
                    nlohmann::json extra) {
    nlohmann::json j;
    j["command"] = command;
    j["run_id"] = cfg.run_id;
    j["config"] = config::dump_config(cfg);
    j["result"] = std::move(extra);
    write_file(cfg.run_dir() / ("manifest_" + command + ".json"), j.dump(2) + "\n");
}

std::unique_ptr<backend::Backend> open_backend(const config::RunConfig& cfg,
                                               const std::string& backbone) {
    auto b = backend::make_backend(cfg.backend.kind, cfg.backend.params);
    if (backbone == "kd") {
        auto* toy = dynamic_cast<backend::ToyBackend*>(b.get());
        if (toy == nullptr) {
            throw ConfigError("backend kind '" + cfg.backend.kind +
                              "' does not support in-process adapters");
        }
        const auto adapter_path = cfg.run_dir() / "adapter.json";
        if (!fs::exists(adapter_path)) {
            throw DataError("no trained adapter at " + adapter_path.string() +
                            " (run the train command first)");
        }
        toy->attach_adapter(backend::LoraAdapter::load(adapter_path));
    }
    return b;
}

std::string user_prompt_for(const config::RunConfig& cfg, const CodePair& pair) {
    const auto kind = variant_from_string(cfg.train_variant);
    const bool reasoning = kind == VariantKind::RR || kind == VariantKind::RC ||
                           kind == VariantKind::RRC;
    return reasoning ? prompts::render_reasoning_prompt(pair)
                     : prompts::render_simple_prompt(pair);
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

SeedResult cmd_seed(const config::RunConfig& cfg) {
    config::validate(cfg);
    auto submissions = corpus::load_corpus(cfg.corpus.root, cfg.corpus.metadata_csv,
                                           cfg.corpus.languages);
    auto valid = corpus::filter_accepted(submissions);

    corpus::PairOptions popts;
    std::unique_ptr<backend::Backend> counter;
    if (cfg.corpus.snippet_token_cap) {
        counter = backend::make_backend(cfg.backend.kind, cfg.backend.params);
        popts.snippet_token_cap = cfg.corpus.snippet_token_cap;
        popts.token_count = [&counter](const std::string& text) {
            return counter->count_tokens(text);
        };
    }

    SeedResult result;
    const auto data_dir = cfg.run_dir() / "data";
    for (const auto& spec : cfg.pairs) {
        const auto key = pair_key(spec);
        const auto tag = pair_tag(spec);
        auto pairs = corpus::build_pairs(valid, {spec.lang1, spec.lang2}, spec.count,
                                         derive_seed(cfg.seed, "pairs:" + tag), popts);
        corpus::SplitOptions sopts;
        sopts.dd_fraction = cfg.split.dd_fraction;
        sopts.sd_test_fraction = cfg.split.sd_test_fraction;
        sopts.seed = derive_seed(cfg.seed, "split:" + tag);
        auto split = corpus::split_sd_dd(pairs, sopts);

        corpus::write_pairs_jsonl(data_dir / ("pairs_" + tag + ".jsonl"), pairs);
        corpus::write_pairs_jsonl(data_dir / ("train_" + tag + ".jsonl"), split.train);
        corpus::write_pairs_jsonl(data_dir / ("sd_test_" + tag + ".jsonl"), split.sd_test);
        corpus::write_pairs_jsonl(data_dir / ("dd_test_" + tag + ".jsonl"), split.dd_test);
        write_file(data_dir / ("split_" + tag + ".json"),
                   nlohmann::json(split.manifest).dump(2) + "\n");

        result.pair_counts[key] = pairs.size();
        result.train_counts[key] = split.train.size();
        result.sd_counts[key] = split.sd_test.size();
        result.dd_counts[key] = split.dd_test.size();
        for (const char* prefix : {"pairs_", "train_", "sd_test_", "dd_test_"}) {
            result.files.push_back(data_dir / (prefix + tag + ".jsonl"));
        }
        result.files.push_back(data_dir / ("split_" + tag + ".json"));
    }

    nlohmann::json echo;
    echo["pair_counts"] = result.pair_counts;
    echo["train_counts"] = result.train_counts;
    echo["sd_counts"] = result.sd_counts;
    echo["dd_counts"] = result.dd_counts;
    write_manifest(cfg, "seed", echo);
    return result;
}

std::vector<std::pair<CodePair, TeacherTrace>> read_retained(const fs::path& path) {
    std::vector<std::pair<CodePair, TeacherTrace>> out;
    for (const auto& line : read_lines(path)) {
        if (trim(line).empty()) continue;
        auto j = nlohmann::json::parse(line);
        out.emplace_back(j.at("pair").get<CodePair>(), j.at("trace").get<TeacherTrace>());
    }
    return out;
}

DistillResult cmd_distill(const config::RunConfig& cfg) {
    config::validate(cfg);
    const auto data_dir = cfg.run_dir() / "data";
    const auto teacher_dir = cfg.run_dir() / "teacher";

    DistillResult result;
    result.ledger_path = teacher_dir / "ledger.jsonl";
    result.retained_path = teacher_dir / "retained.jsonl";

    std::vector<CodePair> all_pairs;
    std::map<std::string, std::vector<std::string>> pair_ids_by_key;
    for (const auto& spec : cfg.pairs) {
        const auto file = data_dir / ("train_" + pair_tag(spec) + ".jsonl");
        if (!fs::exists(file)) {
            throw DataError("missing " + file.string() + " (run the seed command first)");
        }
        auto pairs = corpus::read_pairs_jsonl(file);
        result.seed_counts[pair_key(spec)] = pairs.size();
        for (const auto& p : pairs) pair_ids_by_key[pair_key(spec)].push_back(p.pair_id);
        all_pairs.insert(all_pairs.end(), pairs.begin(), pairs.end());
    }

    std::unique_ptr<teacher::TeacherClient> client;
    if (cfg.teacher.kind == "mock") {
        teacher::MockTeacherClient::Options mopts;
        mopts.disagree_every = cfg.teacher.mock.disagree_every;
        mopts.fail_every = cfg.teacher.mock.fail_every;
        client = std::make_unique<teacher::MockTeacherClient>(all_pairs, mopts);
    } else {
        client = std::make_unique<teacher::HttpTeacherClient>(
            cfg.teacher.endpoint, cfg.teacher.model, cfg.teacher.credential_env);
    }

    std::vector<std::pair<std::string, std::string>> prompts_by_id;
    prompts_by_id.reserve(all_pairs.size());
    for (const auto& p : all_pairs) {
        prompts_by_id.emplace_back(p.pair_id, prompts::render_reasoning_prompt(p));
    }

    result.stats = teacher::run_batch(*client, prompts_by_id, cfg.teacher.policy,
                                      result.ledger_path);

    auto ledger = teacher::read_ledger(result.ledger_path);
    std::vector<TeacherTrace> traces;
    std::size_t failed_total = 0;
    for (const auto& e : ledger) {
        if (e.status != "ok") {
            ++failed_total;
            continue;
        }
        TeacherTrace t;
        t.pair_id = e.pair_id;
        t.raw = e.raw;
        t.reasoning = e.reasoning;
        t.conclusion = e.conclusion;
        t.predicted_label = e.predicted_label;
        traces.push_back(std::move(t));
    }
    auto retained = teacher::filter_agreement(traces, all_pairs);

    std::ostringstream retained_jsonl;
    std::map<std::string, std::size_t> retained_by_id_key;
    std::map<std::string, std::string> key_of_pair;
    for (const auto& [key, ids] : pair_ids_by_key) {
        for (const auto& id : ids) key_of_pair[id] = key;
    }
    for (const auto& [pair, trace] : retained) {
        nlohmann::json j = {{"pair", pair}, {"trace", trace}};
        retained_jsonl << j.dump() << "\n";
        ++result.retained_counts[key_of_pair[pair.pair_id]];
    }
    write_file(result.retained_path, retained_jsonl.str());
    result.retained_total = retained.size();

    std::ostringstream table;
    table << "Language pair      Seed samples   Retained KD samples\n";
    std::size_t seed_total = 0;
    for (const auto& spec : cfg.pairs) {
        const auto key = pair_key(spec);
        char line[128];
        std::snprintf(line, sizeof(line), "%-18s %12zu %21zu\n", key.c_str(),
                      result.seed_counts[key], result.retained_counts[key]);
        table << line;
        seed_total += result.seed_counts[key];
    }
    char line[128];
    std::snprintf(line, sizeof(line), "%-18s %12zu %21zu\n", "Total", seed_total,
                  result.retained_total);
    table << line;
    result.summary = table.str();

    nlohmann::json echo;
    echo["requested"] = result.stats.requested;
    echo["skipped_resume"] = result.stats.skipped_resume;
    echo["succeeded"] = result.stats.succeeded;
    echo["failed"] = result.stats.failed;
    echo["retained_total"] = result.retained_total;
    echo["retained_counts"] = result.retained_counts;
    write_manifest(cfg, "distill", echo);

    if (!all_pairs.empty() && result.retained_total == 0) {
        if (failed_total == ledger.size()) {
            throw ExternalServiceExhausted("all " + std::to_string(failed_total) +
                                           " teacher requests failed; retained set is empty\n" +
                                           result.summary);
        }
        throw DataError("teacher filtering retained no samples\n" + result.summary);
    }
    return result;
}

VariantsResult cmd_variants(const config::RunConfig& cfg) {
    config::validate(cfg);
    const auto retained_path = cfg.run_dir() / "teacher" / "retained.jsonl";
    if (!fs::exists(retained_path)) {
        throw DataError("missing " + retained_path.string() + " (run the distill command first)");
    }
    auto retained = read_retained(retained_path);

    VariantsResult result;
    const auto out_dir = cfg.run_dir() / "variants";
    for (const auto kind : cfg.variants) {
        auto examples = variants::build_variant(retained, kind);
        const auto name = to_string(kind);
        variants::write_examples_jsonl(out_dir / (name + ".jsonl"), examples);
        auto split = variants::train_val_split(examples, cfg.train_val_fraction, cfg.train.seed);
        variants::write_examples_jsonl(out_dir / (name + "_train.jsonl"), split.train);
        variants::write_examples_jsonl(out_dir / (name + "_val.jsonl"), split.val);
        result.counts[name] = examples.size();
        result.files.push_back(out_dir / (name + ".jsonl"));
        result.files.push_back(out_dir / (name + "_train.jsonl"));
        result.files.push_back(out_dir / (name + "_val.jsonl"));
    }
    write_manifest(cfg, "variants", {{"counts", result.counts}});
    return result;
}

namespace {

std::vector<backend::TokenizedSequence> encode_examples(
    const config::RunConfig& cfg, const backend::Backend& b,
    const std::vector<TrainingExample>& examples) {
    std::vector<backend::TokenizedSequence> out;
    out.reserve(examples.size());
    for (const auto& e : examples) {
        auto ex = prompts::build_exchange(cfg.prompting.system_prompt, e.user_prompt,
                                          e.target_response, cfg.prompting.loss_mode);
        out.push_back(b.encode(ex, b.max_len()));
    }
    return out;
}

double mean_lm_loss(const backend::Backend& b,
                    const std::vector<backend::TokenizedSequence>& seqs) {
    double total = 0.0;
    for (const auto& s : seqs) total += b.lm_loss(s);
    return seqs.empty() ? 0.0 : total / static_cast<double>(seqs.size());
}

}  // namespace

TrainResult cmd_train(const config::RunConfig& cfg) {
    config::validate(cfg);
    const auto variant_dir = cfg.run_dir() / "variants";
    const auto train_file = variant_dir / (cfg.train_variant + "_train.jsonl");
    const auto val_file = variant_dir / (cfg.train_variant + "_val.jsonl");
    if (!fs::exists(train_file)) {
        throw DataError("missing " + train_file.string() + " (run the variants command first)");
    }

    auto b = backend::make_backend(cfg.backend.kind, cfg.backend.params);
    auto* toy = dynamic_cast<backend::ToyBackend*>(b.get());
    if (toy == nullptr) {
        throw ConfigError("backend kind '" + cfg.backend.kind +
                          "' does not support in-process fine-tuning");
    }

    auto train_examples = variants::read_examples_jsonl(train_file);
    if (train_examples.empty()) throw DataError("training variant file is empty");
    std::vector<TrainingExample> val_examples;
    if (fs::exists(val_file)) val_examples = variants::read_examples_jsonl(val_file);

    auto train_seqs = encode_examples(cfg, *b, train_examples);
    auto val_seqs = encode_examples(cfg, *b, val_examples);

    TrainResult result;
    result.train_examples = train_seqs.size();
    result.val_examples = val_seqs.size();
    const auto& eval_seqs = val_seqs.empty() ? train_seqs : val_seqs;
    result.base_val_loss = mean_lm_loss(*b, eval_seqs);

    const auto checksum_before = toy->base_checksum();
    backend::finetune(*toy, train_seqs, cfg.adapter, cfg.train, cfg.run_dir());
    if (toy->base_checksum() != checksum_before) {
        throw std::logic_error("base parameters changed during fine-tuning");
    }
    result.adapted_val_loss = mean_lm_loss(*b, eval_seqs);

    result.adapter_path = cfg.run_dir() / "adapter.json";
    toy->adapter().save(result.adapter_path);

    write_manifest(cfg, "train",
                   {{"train_examples", result.train_examples},
                    {"val_examples", result.val_examples},
                    {"base_val_loss", result.base_val_loss},
                    {"adapted_val_loss", result.adapted_val_loss},
                    {"adapter_path", result.adapter_path.string()},
                    {"backbone", toy->identity()}});
    return result;
}

TrainHeadResult cmd_train_head(const config::RunConfig& cfg) {
    config::validate(cfg);
    const auto data_dir = cfg.run_dir() / "data";
    auto b = open_backend(cfg, cfg.head.backbone);

    std::vector<std::pair<RenderedExchange, int>> dataset;
    std::vector<stabilize::PooledEmbedding> pooled;
    std::vector<int> labels;
    for (const auto& spec : cfg.pairs) {
        const auto file = data_dir / ("train_" + pair_tag(spec) + ".jsonl");
        if (!fs::exists(file)) {
            throw DataError("missing " + file.string() + " (run the seed command first)");
        }
        for (const auto& pair : corpus::read_pairs_jsonl(file)) {
            RenderedExchange ex;
            if (cfg.prompting.system_prompt) {
                ex.messages.push_back({Role::system, *cfg.prompting.system_prompt});
            }
            ex.messages.push_back({Role::user, user_prompt_for(cfg, pair)});
            dataset.emplace_back(std::move(ex), pair.label);
            labels.push_back(pair.label);
        }
    }
    if (dataset.empty()) throw DataError("no training pairs for head training");

    stabilize::HeadTrainConfig hcfg;
    hcfg.objective = cfg.head.objective == "joint" ? stabilize::HeadObjective::joint
                                                   : stabilize::HeadObjective::bce;
    hcfg.contrastive = cfg.head.contrastive;
    hcfg.epochs = cfg.head.epochs;
    hcfg.batch_size = cfg.head.batch_size;
    hcfg.learning_rate = cfg.head.learning_rate;
    hcfg.dropout = cfg.head.dropout;
    hcfg.seed = cfg.head.seed;

    const auto checksum_before = b->base_checksum();
    std::vector<RenderedExchange> exchanges;
    for (auto& [ex, y] : dataset) exchanges.push_back(ex);
    pooled = stabilize::pool_dataset(*b, exchanges);
    auto params = stabilize::train_head_on_embeddings(pooled, labels, hcfg, b->dim());
    if (b->base_checksum() != checksum_before) {
        throw std::logic_error("backbone parameters changed during head training");
    }

    TrainHeadResult result;
    result.backbone = b->identity();
    result.train_accuracy = stabilize::head_accuracy(params, pooled, labels);
    result.head_path = cfg.run_dir() / "heads" / (cfg.head.objective + ".json");
    stabilize::save_head(result.head_path, params, hcfg, result.backbone);

    write_manifest(cfg, "train_head_" + cfg.head.objective,
                   {{"head_path", result.head_path.string()},
                    {"train_accuracy", result.train_accuracy},
                    {"backbone", result.backbone},
                    {"examples", dataset.size()}});
    return result;
}

namespace {

struct MethodRun {
    std::vector<Verdict> preds;
    double wall_s = 0.0;
};

MethodRun run_generation(const config::RunConfig& cfg, const backend::Backend& b,
                         const std::vector<CodePair>& pairs) {
    MethodRun r;
    r.preds.assign(pairs.size(), Verdict::invalid);
    const auto start = std::chrono::steady_clock::now();
    const auto n = static_cast<std::ptrdiff_t>(pairs.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) if (cfg.eval.parallel)
#endif
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto& pair = pairs[static_cast<std::size_t>(i)];
        auto seq = b.encode_prompt(cfg.prompting.system_prompt, user_prompt_for(cfg, pair));
        auto text = b.generate(seq, cfg.eval.max_new_tokens);
        r.preds[static_cast<std::size_t>(i)] = eval::parse_conclusion(text);
    }
    r.wall_s = seconds_since(start);
    return r;
}

MethodRun run_forced(const config::RunConfig& cfg, const backend::Backend& b,
                     const std::vector<CodePair>& pairs) {
    MethodRun r;
    r.preds.assign(pairs.size(), Verdict::invalid);
    const auto tokens = stabilize::label_token_sets(b);
    const auto start = std::chrono::steady_clock::now();
    const auto n = static_cast<std::ptrdiff_t>(pairs.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) if (cfg.eval.parallel)
#endif
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto& pair = pairs[static_cast<std::size_t>(i)];
        auto res = stabilize::forced_conclusion(b, cfg.prompting.system_prompt,
                                                user_prompt_for(cfg, pair), tokens,
                                                cfg.eval.max_new_tokens);
        r.preds[static_cast<std::size_t>(i)] =
            res.label == 1 ? Verdict::clone : Verdict::non_clone;
    }
    r.wall_s = seconds_since(start);
    return r;
}

MethodRun run_head(const config::RunConfig& cfg, const backend::Backend& b,
                   const std::vector<CodePair>& pairs, const stabilize::HeadParams& params) {
    MethodRun r;
    r.preds.assign(pairs.size(), Verdict::invalid);
    const auto start = std::chrono::steady_clock::now();
    const auto n = static_cast<std::ptrdiff_t>(pairs.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) if (cfg.eval.parallel)
#endif
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        const auto& pair = pairs[static_cast<std::size_t>(i)];
        auto seq = b.encode_prompt(cfg.prompting.system_prompt, user_prompt_for(cfg, pair));
        auto fwd = b.forward(seq);
        auto pooled = stabilize::mean_pool(fwd.hidden, seq.attention_mask);
        auto hf = stabilize::head_forward(pooled, params, false, nullptr);
        r.preds[static_cast<std::size_t>(i)] =
            stabilize::predict_head(hf.logit) == 1 ? Verdict::clone : Verdict::non_clone;
    }
    r.wall_s = seconds_since(start);
    return r;
}

}  // namespace

EvalResult cmd_eval(const config::RunConfig& cfg) {
    config::validate(cfg);
    const auto data_dir = cfg.run_dir() / "data";
    auto b = open_backend(cfg, cfg.eval.backbone);
    const auto rule = cfg.eval.scaled_f1_rule == "drop_invalid" ? eval::ScaledRule::drop_invalid
                                                                : eval::ScaledRule::wrong_label;

    std::optional<stabilize::HeadParams> bce_head;
    std::optional<stabilize::HeadParams> joint_head;
    for (const auto& m : cfg.eval.methods) {
        if (m == "binary_head" && !bce_head) {
            bce_head = stabilize::load_head(cfg.run_dir() / "heads" / "bce.json");
        }
        if (m == "contrastive_head" && !joint_head) {
            joint_head = stabilize::load_head(cfg.run_dir() / "heads" / "joint.json");
        }
    }

    EvalResult result;
    const auto reports_dir = cfg.run_dir() / "reports";
    for (const auto& spec : cfg.pairs) {
        for (const auto& set_name : cfg.eval.test_sets) {
            const auto file = data_dir / (set_name + "_test_" + pair_tag(spec) + ".jsonl");
            if (!fs::exists(file)) {
                throw DataError("missing " + file.string() + " (run the seed command first)");
            }
            auto pairs = corpus::read_pairs_jsonl(file);
            if (cfg.eval.limit && pairs.size() > *cfg.eval.limit) {
                pairs.resize(*cfg.eval.limit);
            }
            if (pairs.empty()) continue;
            std::vector<int> truth;
            truth.reserve(pairs.size());
            for (const auto& p : pairs) truth.push_back(p.label);

            std::string set_label = pair_key(spec) + "_";
            set_label += (set_name == "sd" ? "SD" : set_name == "dd" ? "DD" : set_name);

            for (const auto& method : cfg.eval.methods) {
                MethodRun run;
                if (method == "generation") {
                    run = run_generation(cfg, *b, pairs);
                } else if (method == "forced_conclusion") {
                    run = run_forced(cfg, *b, pairs);
                } else if (method == "binary_head") {
                    run = run_head(cfg, *b, pairs, *bce_head);
                } else {
                    run = run_head(cfg, *b, pairs, *joint_head);
                }
                const double wall = cfg.eval.stable_timings ? 0.0 : run.wall_s;
                auto report = eval::make_report(cfg.run_id, method, b->identity(), set_label,
                                                run.preds, truth, wall, rule);
                result.reports.push_back(report);
                const auto fname = "report_" + method + "_" + pair_tag(spec) + "_" + set_name +
                                   ".json";
                write_file(reports_dir / fname, nlohmann::json(report).dump(2) + "\n");
            }
        }
    }

    result.table = eval::render_comparison(result.reports);
    result.report_path = reports_dir / "report.json";
    write_file(result.report_path, nlohmann::json(result.reports).dump(2) + "\n");
    write_file(reports_dir / "comparison.txt", result.table);
    write_manifest(cfg, "eval", {{"reports", result.reports.size()}});
    return result;
}

std::string cmd_report(const std::vector<fs::path>& report_files, const fs::path& out_json) {
    std::vector<eval::EvalReport> merged;
    for (const auto& file : report_files) {
        auto j = nlohmann::json::parse(read_file(file));
        if (j.is_array()) {
            for (const auto& item : j) merged.push_back(item.get<eval::EvalReport>());
        } else {
            merged.push_back(j.get<eval::EvalReport>());
        }
    }
    auto table = eval::render_comparison(merged);
    if (!out_json.empty()) {
        write_file(out_json, nlohmann::json(merged).dump(2) + "\n");
    }
    return table;
}

}  // namespace xccd::pipeline
