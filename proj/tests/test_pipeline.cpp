#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <sys/wait.h>

#include "bilex/reporting.hpp"
#include "bilex/stages.hpp"

using namespace bilex;
namespace fs = std::filesystem;

namespace {

struct PipelineFixture {
    fs::path root;
    ExperimentConfig cfg;

    PipelineFixture() {
        root = fs::temp_directory_path() / "bilex_pipeline_test";
        fs::remove_all(root);
        fs::create_directories(root);

        SynthSpec spec;
        spec.seed = 21;
        spec.n_fillers = 60;
        spec.l1_train_words = 6000;
        spec.l2_train_words = 2000;
        spec.l1_test_words = 600;
        spec.l2_test_words = 600;
        auto data = make_synthetic(spec);
        auto put = [&](const std::string& name, const std::string& content) {
            write_file((root / name).string(), content);
        };
        put("corpus_nl.jsonl", store_to_jsonl(data.l1_train, data.langs));
        put("corpus_en.jsonl", store_to_jsonl(data.l2_train, data.langs));
        put("corpus_nl_test.jsonl", store_to_jsonl(data.l1_test, data.langs));
        put("corpus_en_test.jsonl", store_to_jsonl(data.l2_test, data.langs));
        put("annotations.tsv", annotations_to_tsv(data.annotations));
        put("stimuli_friend.tsv",
            stimuli_to_tsv(data.stimuli_friend, data.langs));
        put("stimuli_falsefriend.tsv",
            stimuli_to_tsv(data.stimuli_falsefriend, data.langs));

        json j;
        j["languages"] = {{"l1", "nl"}, {"l2", "en"}};
        j["paths"] = {{"corpus_l1", "corpus_nl.jsonl"},
                      {"corpus_l2", "corpus_en.jsonl"},
                      {"corpus_l1_test", "corpus_nl_test.jsonl"},
                      {"corpus_l2_test", "corpus_en_test.jsonl"},
                      {"annotations", {"annotations.tsv"}},
                      {"stimuli_friend", "stimuli_friend.tsv"},
                      {"stimuli_falsefriend", "stimuli_falsefriend.tsv"},
                      {"out_dir", "out"}};
        j["condition"] = "all";
        j["tokenizer"] = {{"vocab_size", 384},
                          {"min_frequency", 2},
                          {"ne_vocab_size", 280},
                          {"ne_min_frequency", 2}};
        j["model"] = {{"n_layers", 1},       {"n_heads", 2},
                      {"d_model", 32},       {"d_ff", 64},
                      {"context_length", 64}, {"vocab_size", 0},
                      {"dropout", 0.0},      {"seed", 1234},
                      {"tied_head", true}};
        j["train"] = {{"lr", 2e-3},
                      {"warmup_steps", 10},
                      {"weight_decay", 0.05},
                      {"effective_batch_tokens", 512},
                      {"grad_accum_steps", 2},
                      {"epochs", 1},
                      {"l1_fraction", 0.75},
                      {"seed", 99}};
        j["probes"] = {{"layers", {1}},       {"n_sentences", 30},
                       {"n_calibration", 300}, {"seed", 7},
                       {"surprisal", true},   {"similarity", true}};
        write_file((root / "config.json").string(), j.dump(2));
        cfg = load_config((root / "config.json").string());
    }
};

// The fixture pipeline run is expensive; share it across sections.
PipelineFixture& fixture() {
    static PipelineFixture fx;
    return fx;
}

std::ostringstream g_sink;

int run_cli(const std::string& args) {
    const std::string cmd = std::string(BILEX_CLI_PATH) + " " + args +
                            " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

}  // namespace

TEST_CASE("pipeline: config validation catches missing pieces") {
    auto& fx = fixture();
    CHECK_THROWS_AS(load_config((fx.root / "nope.json").string()),
                    ConfigError);
    // a config pointing at a missing corpus
    json j = json::parse(read_file((fx.root / "config.json").string()));
    j["paths"]["corpus_l1"] = "missing.jsonl";
    write_file((fx.root / "bad.json").string(), j.dump());
    CHECK_THROWS_AS(load_config((fx.root / "bad.json").string()), ConfigError);
    // seeds must be explicit
    json j2 = json::parse(read_file((fx.root / "config.json").string()));
    j2["model"].erase("seed");
    write_file((fx.root / "noseed.json").string(), j2.dump());
    CHECK_THROWS_WITH(load_config((fx.root / "noseed.json").string()),
                      Catch::Matchers::ContainsSubstring("seed"));
}

TEST_CASE("pipeline: stage dependencies are enforced in order") {
    auto& fx = fixture();
    CHECK_THROWS_AS(run_tokenize(fx.cfg, g_sink), StageError);
    CHECK_THROWS_AS(run_train(fx.cfg, g_sink), StageError);
    CHECK_THROWS_AS(run_probe(fx.cfg, g_sink), StageError);
    CHECK_THROWS_AS(run_stats(fx.cfg, g_sink), StageError);
    CHECK_THROWS_AS(run_report(fx.cfg, g_sink), StageError);
}

TEST_CASE("pipeline: full run produces all artifacts") {
    auto& fx = fixture();
    run_lexicon(fx.cfg, g_sink);
    run_tokenize(fx.cfg, g_sink);
    run_train(fx.cfg, g_sink);
    run_probe(fx.cfg, g_sink);
    run_stats(fx.cfg, g_sink);
    run_report(fx.cfg, g_sink);

    for (auto c : all_conditions()) {
        CHECK(file_exists(StagePaths::manifest(fx.cfg, c)));
        CHECK(file_exists(StagePaths::tokenizer(fx.cfg, c)));
        CHECK(file_exists(StagePaths::vocab_report(fx.cfg, c)));
        CHECK(file_exists(StagePaths::checkpoint(fx.cfg, c)));
        CHECK(file_exists(StagePaths::loss_csv(fx.cfg, c)));
        CHECK(file_exists(StagePaths::surprisal_csv(fx.cfg, c)));
        CHECK(file_exists(StagePaths::similarity_csv(fx.cfg, c)));
        // the 8-model summary: one fit per study and condition
        CHECK(file_exists(StagePaths::fit_json(fx.cfg, "friend", c)));
        CHECK(file_exists(StagePaths::fit_json(fx.cfg, "falsefriend", c)));
    }
    CHECK(file_exists(StagePaths::stats_summary(fx.cfg)));
    CHECK(file_exists(StagePaths::lrt_json(fx.cfg, "friend")));
    CHECK(file_exists(StagePaths::lrt_json(fx.cfg, "falsefriend")));
    CHECK(file_exists(StagePaths::report(fx.cfg)));
}

TEST_CASE("pipeline: every output embeds the config hash and version") {
    auto& fx = fixture();
    const std::string hash = fx.cfg.config_hash();
    for (auto c : all_conditions()) {
        for (const auto& path :
             {StagePaths::manifest(fx.cfg, c), StagePaths::tokenizer(fx.cfg, c),
              StagePaths::loss_csv(fx.cfg, c),
              StagePaths::surprisal_csv(fx.cfg, c),
              StagePaths::similarity_csv(fx.cfg, c)}) {
            const std::string content = read_file(path);
            INFO(path);
            CHECK(content.find(hash) != std::string::npos);
        }
        json meta;
        load_checkpoint(StagePaths::checkpoint(fx.cfg, c), &meta);
        CHECK(meta.at("config_hash").get<std::string>() == hash);
    }
    CHECK(read_file(StagePaths::report(fx.cfg)).find(hash) !=
          std::string::npos);
}

TEST_CASE("pipeline: re-running is idempotent (byte-identical outputs)") {
    auto& fx = fixture();
    const std::string tok_a =
        read_file(StagePaths::tokenizer(fx.cfg, Condition::A_full));
    const std::string loss_a =
        read_file(StagePaths::loss_csv(fx.cfg, Condition::A_full));
    const std::string report = read_file(StagePaths::report(fx.cfg));

    // unchanged inputs: stages skip and leave bytes alone
    run_tokenize(fx.cfg, g_sink);
    run_train(fx.cfg, g_sink);
    CHECK(read_file(StagePaths::tokenizer(fx.cfg, Condition::A_full)) ==
          tok_a);
    CHECK(read_file(StagePaths::loss_csv(fx.cfg, Condition::A_full)) ==
          loss_a);

    // regeneration from scratch reproduces the bytes
    fs::remove(StagePaths::tokenizer(fx.cfg, Condition::A_full));
    run_tokenize(fx.cfg, g_sink);
    CHECK(read_file(StagePaths::tokenizer(fx.cfg, Condition::A_full)) ==
          tok_a);
    run_report(fx.cfg, g_sink);
    CHECK(read_file(StagePaths::report(fx.cfg)) == report);
}

TEST_CASE("pipeline: mismatched config hashes are refused") {
    auto& fx = fixture();
    ExperimentConfig changed = fx.cfg;
    changed.train.seed += 1;  // different experiment now
    CHECK_THROWS_WITH(run_train(changed, g_sink),
                      Catch::Matchers::ContainsSubstring("config"));
    CHECK_THROWS_AS(run_report(changed, g_sink), StageError);
}

TEST_CASE("pipeline: single-condition run touches only that condition") {
    auto& fx = fixture();
    ExperimentConfig one = fx.cfg;
    one.condition = "B";
    one.out_dir = (fx.root / "out_b").string();
    run_lexicon(one, g_sink);
    run_tokenize(one, g_sink);
    CHECK(file_exists(StagePaths::tokenizer(one, Condition::B_friends)));
    CHECK(!file_exists(StagePaths::tokenizer(one, Condition::A_full)));
    // stats on a single condition cannot satisfy the 8-model summary
    auto conds = one.selected_conditions();
    REQUIRE(conds.size() == 1);
    CHECK(conds[0] == Condition::B_friends);
}

TEST_CASE("cli: exit codes for config, dependency and parse errors") {
    auto& fx = fixture();
    // config error: missing file
    CHECK(run_cli("lexicon --config /nonexistent/config.json") == 2);
    // parse error
    CHECK(run_cli("definitely-not-a-command") == 2);
    // stage dependency error: fresh out dir, train before tokenize
    CHECK(run_cli("train --config " + (fx.root / "config.json").string() +
                  " --out " + (fx.root / "cli_out").string()) == 3);
    // success: lexicon stage in a fresh dir
    CHECK(run_cli("lexicon --config " + (fx.root / "config.json").string() +
                  " --out " + (fx.root / "cli_out").string()) == 0);
    CHECK(file_exists((fs::path(fx.root) / "cli_out" / "lexicon" /
                       "manifest_A.json")
                          .string()));
}

TEST_CASE("report mentions vocabulary deltas between conditions") {
    auto& fx = fixture();
    const std::string report = read_file(StagePaths::report(fx.cfg));
    CHECK(report.find("D - B vocabulary delta = 10") != std::string::npos);
    CHECK(report.find("D - C vocabulary delta = 6") != std::string::npos);
    CHECK(report.find("## Surprisal contrasts") != std::string::npos);
    CHECK(report.find("## Cross-lingual similarity") != std::string::npos);
}
