#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "bilex/reporting.hpp"
#include "bilex/stages.hpp"

namespace {

struct GlobalOpts {
    std::string config_path;
    std::string condition;
    std::string out_dir;
    long long seed_override = -1;
    int threads = 1;
    bool deterministic = false;
};

bilex::ExperimentConfig resolve(const GlobalOpts& opts) {
    auto cfg = bilex::load_config(opts.config_path);
    if (!opts.condition.empty()) cfg.condition = opts.condition;
    if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
    if (opts.seed_override >= 0) {
        const auto s = static_cast<std::uint64_t>(opts.seed_override);
        cfg.model.seed = s;
        cfg.train.seed = s;
        cfg.probes.seed = s;
    }
    cfg.threads = opts.threads;
    cfg.deterministic = opts.deterministic;
    if (cfg.condition != "all") bilex::parse_condition(cfg.condition);
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"bilex: bilingual vocabulary-sharing workbench"};
    app.require_subcommand(1);

    GlobalOpts opts;
    app.add_option("--config", opts.config_path, "experiment config JSON")
        ->required();
    app.add_option("--condition", opts.condition,
                   "vocabulary condition (A, B, C, D or all)");
    app.add_option("--out", opts.out_dir, "output directory override");
    app.add_option("--seed-override", opts.seed_override,
                   "override model/train/probe seeds");
    app.add_option("--threads", opts.threads,
                   "parallel condition jobs (within-run compute stays "
                   "single-threaded)");
    app.add_flag("--deterministic", opts.deterministic,
                 "force sequential execution");

    auto* lexicon = app.add_subcommand(
        "lexicon", "frequency tables, overlap classification, manifests");
    auto* tokenize =
        app.add_subcommand("tokenize", "train BPE models, build vocabularies");
    auto* train_cmd =
        app.add_subcommand("train", "train one causal LM per condition");
    auto* probe = app.add_subcommand(
        "probe", "surprisal and cross-lingual similarity probes");
    auto* stats =
        app.add_subcommand("stats", "mixed-effects fits and LR tests");
    auto* report = app.add_subcommand("report", "collated markdown report");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        auto cfg = resolve(opts);
        if (lexicon->parsed()) bilex::run_lexicon(cfg, std::cout);
        if (tokenize->parsed()) bilex::run_tokenize(cfg, std::cout);
        if (train_cmd->parsed()) bilex::run_train(cfg, std::cout);
        if (probe->parsed()) bilex::run_probe(cfg, std::cout);
        if (stats->parsed()) bilex::run_stats(cfg, std::cout);
        if (report->parsed()) bilex::run_report(cfg, std::cout);
    } catch (const bilex::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const bilex::StageError& e) {
        std::cerr << "stage error: " << e.what() << "\n";
        return 3;
    } catch (const bilex::NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    } catch (const bilex::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
