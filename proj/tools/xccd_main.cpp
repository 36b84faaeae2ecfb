#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "xccd/backend.hpp"
#include "xccd/config.hpp"
#include "xccd/corpus.hpp"
#include "xccd/pipeline.hpp"
#include "xccd/teacher.hpp"
#include "xccd/variants.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitExternal = 4;

struct CommonArgs {
    std::string config_path;
    std::string run_id;
    std::string output_root;
    bool dry_run = false;
    long long seed = -1;
};

xccd::config::RunConfig load(const CommonArgs& args) {
    auto cfg = xccd::config::load_config(args.config_path);
    if (!args.run_id.empty()) cfg.run_id = args.run_id;
    if (!args.output_root.empty()) cfg.output_root = args.output_root;
    if (args.seed >= 0) cfg.seed = static_cast<std::uint64_t>(args.seed);
    return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("-c,--config", args.config_path, "Run configuration (JSON)")->required();
    cmd->add_option("--run-id", args.run_id, "Override run_id");
    cmd->add_option("--output-root", args.output_root, "Override output_root");
    cmd->add_option("--seed", args.seed, "Override global seed");
    cmd->add_flag("--dry-run", args.dry_run,
                  "Validate the configuration and corpus without side effects");
}

// Dry-run: full config validation plus a corpus read, no API calls, no
// training, no files written.
int dry_run(const xccd::config::RunConfig& cfg) {
    xccd::config::validate(cfg);
    auto submissions = xccd::corpus::load_corpus(cfg.corpus.root, cfg.corpus.metadata_csv,
                                                 cfg.corpus.languages);
    auto valid = xccd::corpus::filter_accepted(submissions);
    std::printf("dry-run ok: %zu submissions, %zu accepted, %zu pair specs\n",
                submissions.size(), valid.size(), cfg.pairs.size());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Knowledge-distillation pipeline for cross-language code clone detection"};
    app.require_subcommand(1);

    CommonArgs seed_args, distill_args, variants_args, train_args, head_args, eval_args;

    auto* cmd_seed = app.add_subcommand("seed", "Build balanced cross-language pair datasets");
    add_common(cmd_seed, seed_args);

    auto* cmd_distill =
        app.add_subcommand("distill", "Query the teacher and apply the agreement filter");
    add_common(cmd_distill, distill_args);

    auto* cmd_variants = app.add_subcommand("variants", "Materialize KD training-set variants");
    add_common(cmd_variants, variants_args);

    auto* cmd_train = app.add_subcommand("train", "Fine-tune low-rank adapters on a variant");
    add_common(cmd_train, train_args);

    auto* cmd_train_head =
        app.add_subcommand("train-head", "Train a classification head on the frozen backbone");
    add_common(cmd_train_head, head_args);
    std::string head_objective;
    cmd_train_head->add_option("--objective", head_objective,
                               "Override head.objective (bce or joint)");

    auto* cmd_eval = app.add_subcommand("eval", "Evaluate inference methods on the test sets");
    add_common(cmd_eval, eval_args);

    auto* cmd_report = app.add_subcommand("report", "Merge eval reports into a comparison table");
    std::vector<std::string> report_files;
    std::string report_out;
    cmd_report->add_option("files", report_files, "Report JSON files")->required();
    cmd_report->add_option("-o,--out", report_out, "Write merged JSON here");

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_seed->parsed()) {
            auto cfg = load(seed_args);
            if (seed_args.dry_run) return dry_run(cfg);
            auto r = xccd::pipeline::cmd_seed(cfg);
            for (const auto& [key, n] : r.pair_counts) {
                std::printf("%s: %zu pairs (train %zu, sd %zu, dd %zu)\n", key.c_str(), n,
                            r.train_counts[key], r.sd_counts[key], r.dd_counts[key]);
            }
        } else if (cmd_distill->parsed()) {
            auto cfg = load(distill_args);
            if (distill_args.dry_run) return dry_run(cfg);
            auto r = xccd::pipeline::cmd_distill(cfg);
            std::printf("requests: %zu new, %zu resumed, %zu failed\n", r.stats.requested,
                        r.stats.skipped_resume, r.stats.failed);
            std::fputs(r.summary.c_str(), stdout);
        } else if (cmd_variants->parsed()) {
            auto cfg = load(variants_args);
            if (variants_args.dry_run) return dry_run(cfg);
            auto r = xccd::pipeline::cmd_variants(cfg);
            for (const auto& [kind, n] : r.counts) {
                std::printf("%s: %zu examples\n", kind.c_str(), n);
            }
        } else if (cmd_train->parsed()) {
            auto cfg = load(train_args);
            if (train_args.dry_run) return dry_run(cfg);
            auto r = xccd::pipeline::cmd_train(cfg);
            std::printf("trained on %zu examples (val %zu): lm loss %.4f -> %.4f\n",
                        r.train_examples, r.val_examples, r.base_val_loss, r.adapted_val_loss);
            std::printf("adapter: %s\n", r.adapter_path.string().c_str());
        } else if (cmd_train_head->parsed()) {
            auto cfg = load(head_args);
            if (!head_objective.empty()) cfg.head.objective = head_objective;
            if (head_args.dry_run) return dry_run(cfg);
            auto r = xccd::pipeline::cmd_train_head(cfg);
            std::printf("head %s on %s: train accuracy %.3f\n", r.head_path.string().c_str(),
                        r.backbone.c_str(), r.train_accuracy);
        } else if (cmd_eval->parsed()) {
            auto cfg = load(eval_args);
            if (eval_args.dry_run) return dry_run(cfg);
            auto r = xccd::pipeline::cmd_eval(cfg);
            std::fputs(r.table.c_str(), stdout);
            std::printf("reports: %s\n", r.report_path.string().c_str());
        } else if (cmd_report->parsed()) {
            std::vector<std::filesystem::path> files(report_files.begin(), report_files.end());
            auto table = xccd::pipeline::cmd_report(files, report_out);
            std::fputs(table.c_str(), stdout);
        }
        return kExitOk;
    } catch (const xccd::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const xccd::teacher::CredentialMissing& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const xccd::pipeline::ExternalServiceExhausted& e) {
        std::cerr << "external service exhausted: " << e.what() << "\n";
        return kExitExternal;
    } catch (const xccd::corpus::InsufficientCorpus& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const xccd::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
