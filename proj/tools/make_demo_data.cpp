// Generates a small synthetic bilingual dataset plus a ready-to-run
// experiment config, so the pipeline can be exercised end to end without
// external corpora.
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "bilex/synth.hpp"

int main(int argc, char** argv) {
    CLI::App app{"make_demo_data: write a synthetic bilingual dataset"};
    std::string out_dir = "demo";
    std::uint64_t seed = 1;
    int l1_words = 60000;
    int l2_words = 20000;
    app.add_option("--out", out_dir, "target directory");
    app.add_option("--seed", seed, "generator seed");
    app.add_option("--l1-words", l1_words, "L1 training word budget");
    app.add_option("--l2-words", l2_words, "L2 training word budget");
    CLI11_PARSE(app, argc, argv);

    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    bilex::SynthSpec spec;
    spec.seed = seed;
    spec.l1_train_words = l1_words;
    spec.l2_train_words = l2_words;
    auto data = bilex::make_synthetic(spec);

    auto put = [&](const std::string& name, const std::string& content) {
        bilex::write_file((fs::path(out_dir) / name).string(), content);
    };
    put("corpus_nl.jsonl", bilex::store_to_jsonl(data.l1_train, data.langs));
    put("corpus_en.jsonl", bilex::store_to_jsonl(data.l2_train, data.langs));
    put("corpus_nl_test.jsonl",
        bilex::store_to_jsonl(data.l1_test, data.langs));
    put("corpus_en_test.jsonl",
        bilex::store_to_jsonl(data.l2_test, data.langs));
    put("annotations.tsv", bilex::annotations_to_tsv(data.annotations));
    put("stimuli_friend.tsv",
        bilex::stimuli_to_tsv(data.stimuli_friend, data.langs));
    put("stimuli_falsefriend.tsv",
        bilex::stimuli_to_tsv(data.stimuli_falsefriend, data.langs));

    bilex::json cfg;
    cfg["languages"] = {{"l1", "nl"}, {"l2", "en"}};
    cfg["paths"] = {{"corpus_l1", "corpus_nl.jsonl"},
                    {"corpus_l2", "corpus_en.jsonl"},
                    {"corpus_l1_test", "corpus_nl_test.jsonl"},
                    {"corpus_l2_test", "corpus_en_test.jsonl"},
                    {"annotations", {"annotations.tsv"}},
                    {"stimuli_friend", "stimuli_friend.tsv"},
                    {"stimuli_falsefriend", "stimuli_falsefriend.tsv"},
                    {"out_dir", "out"}};
    cfg["condition"] = "all";
    cfg["tokenizer"] = {{"vocab_size", 512},
                        {"min_frequency", 2},
                        {"ne_vocab_size", 300},
                        {"ne_min_frequency", 2}};
    cfg["model"] = {{"n_layers", 2},     {"n_heads", 4},
                    {"d_model", 64},     {"d_ff", 256},
                    {"context_length", 128}, {"vocab_size", 0},
                    {"dropout", 0.0},    {"seed", 1234},
                    {"tied_head", true}};
    cfg["train"] = {{"lr", 1e-3},
                    {"warmup_steps", 40},
                    {"weight_decay", 0.1},
                    {"effective_batch_tokens", 2048},
                    {"grad_accum_steps", 2},
                    {"epochs", 2},
                    {"l1_fraction", 0.75},
                    {"seed", 999}};
    cfg["probes"] = {{"layers", {2}},       {"n_sentences", 120},
                     {"n_calibration", 1500}, {"seed", 777},
                     {"surprisal", true},   {"similarity", true}};
    put("config.json", cfg.dump(2) + "\n");

    std::cout << "wrote demo dataset to " << out_dir << " ("
              << data.l1_train.size() << " L1 and " << data.l2_train.size()
              << " L2 training sentences)\n";
    return 0;
}
