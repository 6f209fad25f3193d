#pragma once

#include <future>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "bilex/pipeline.hpp"

namespace bilex {

// ---- probe record CSV formats ----

struct SurprisalRow {
    std::string study;  // "friend" or "falsefriend"
    Condition condition;
    std::string item_id;
    LanguageTag lang;
    WordCategory category;
    std::string word;
    int word_index;
    int sentence_words;
    double surprisal_bits;
    int layer;
    std::uint64_t seed;
};

inline std::string surprisal_rows_to_csv(const std::vector<SurprisalRow>& rows,
                                         const LanguagePair& langs,
                                         const std::string& header) {
    std::string out = header;
    out +=
        "study,condition,item_id,lang,word_category,word,word_index,"
        "sentence_words,surprisal_bits,layer,seed\n";
    char buf[64];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.9g", r.surprisal_bits);
        out += r.study + "," + condition_name(r.condition) + "," + r.item_id +
               "," + langs.name(r.lang) + "," +
               word_category_name(r.category) + "," + r.word + "," +
               std::to_string(r.word_index) + "," +
               std::to_string(r.sentence_words) + "," + buf + "," +
               std::to_string(r.layer) + "," + std::to_string(r.seed) + "\n";
    }
    return out;
}

inline std::vector<SurprisalRow> surprisal_rows_from_csv(
    const std::string& content, const LanguagePair& langs) {
    std::vector<SurprisalRow> rows;
    size_t pos = 0;
    bool saw_header = false;
    while (pos < content.size()) {
        size_t eol = content.find('\n', pos);
        if (eol == std::string::npos) eol = content.size();
        std::string line = content.substr(pos, eol - pos);
        pos = eol + 1;
        if (line.empty() || line[0] == '#') continue;
        if (!saw_header) {
            saw_header = true;  // column header
            continue;
        }
        auto c = split(line, ',');
        if (c.size() < 11) throw DataError("bad surprisal row: " + line);
        SurprisalRow r;
        r.study = c[0];
        r.condition = parse_condition(c[1]);
        r.item_id = c[2];
        r.lang = langs.parse(c[3]);
        r.category = c[4] == "experimental" ? WordCategory::Experimental
                                            : WordCategory::Control;
        r.word = c[5];
        r.word_index = std::stoi(c[6]);
        r.sentence_words = std::stoi(c[7]);
        r.surprisal_bits = std::stod(c[8]);
        r.layer = std::stoi(c[9]);
        r.seed = std::stoull(c[10]);
        rows.push_back(std::move(r));
    }
    return rows;
}

struct SimilarityRow {
    Condition condition;
    int layer;
    std::uint64_t seed;
    std::string word;
    std::string kind;  // "context" or "word"
    double cosine;
    size_t n_l1;
    size_t n_l2;
    std::string note;  // e.g. "skipped: no occurrences in l1"
};

inline std::string similarity_rows_to_csv(const std::vector<SimilarityRow>& rows,
                                          const std::string& header) {
    std::string out = header;
    out += "condition,layer,seed,word,kind,cosine,n_l1,n_l2,note\n";
    char buf[64];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.9g", r.cosine);
        out += std::string(condition_name(r.condition)) + "," +
               std::to_string(r.layer) + "," + std::to_string(r.seed) + "," +
               r.word + "," + r.kind + "," + (r.note.empty() ? buf : "") +
               "," + std::to_string(r.n_l1) + "," + std::to_string(r.n_l2) +
               "," + r.note + "\n";
    }
    return out;
}

inline std::vector<SimilarityRow> similarity_rows_from_csv(
    const std::string& content) {
    std::vector<SimilarityRow> rows;
    size_t pos = 0;
    bool saw_header = false;
    while (pos < content.size()) {
        size_t eol = content.find('\n', pos);
        if (eol == std::string::npos) eol = content.size();
        std::string line = content.substr(pos, eol - pos);
        pos = eol + 1;
        if (line.empty() || line[0] == '#') continue;
        if (!saw_header) {
            saw_header = true;
            continue;
        }
        auto c = split(line, ',');
        if (c.size() < 9) throw DataError("bad similarity row: " + line);
        SimilarityRow r;
        r.condition = parse_condition(c[0]);
        r.layer = std::stoi(c[1]);
        r.seed = std::stoull(c[2]);
        r.word = c[3];
        r.kind = c[4];
        r.cosine = c[5].empty() ? 0.0 : std::stod(c[5]);
        r.n_l1 = std::stoull(c[6]);
        r.n_l2 = std::stoull(c[7]);
        r.note = c[8];
        rows.push_back(std::move(r));
    }
    return rows;
}

// ---- shared stage helpers ----

namespace detail {

struct LoadedCorpora {
    DocumentStore l1_train, l2_train, l1_test, l2_test;
};

inline LoadedCorpora load_corpora(const ExperimentConfig& cfg) {
    LoadedCorpora c;
    c.l1_train = ingest(cfg.corpus_l1, LanguageTag::L1, cfg.langs);
    c.l2_train = ingest(cfg.corpus_l2, LanguageTag::L2, cfg.langs);
    if (!cfg.corpus_l1_test.empty())
        c.l1_test = ingest(cfg.corpus_l1_test, LanguageTag::L1, cfg.langs);
    if (!cfg.corpus_l2_test.empty())
        c.l2_test = ingest(cfg.corpus_l2_test, LanguageTag::L2, cfg.langs);
    return c;
}

inline std::set<std::string> punct_forms(const FrequencyTable& a,
                                         const FrequencyTable& b) {
    std::set<std::string> out;
    for (const auto& [form, n] : a.counts)
        if (uni::is_punct_token(form)) out.insert(form);
    for (const auto& [form, n] : b.counts)
        if (uni::is_punct_token(form)) out.insert(form);
    return out;
}

inline std::set<std::string> control_forms(
    const std::vector<AnnotationFile>& files) {
    std::set<std::string> out;
    for (const auto& f : files)
        for (const auto& [form, klass] : f.rows)
            if (klass == WordKlass::Control) out.insert(form);
    return out;
}

inline std::vector<AnnotationFile> load_annotations(
    const ExperimentConfig& cfg) {
    std::vector<AnnotationFile> files;
    for (const auto& path : cfg.annotation_paths)
        files.push_back(parse_annotations(
            read_file(path), std::filesystem::path(path).filename().string()));
    return files;
}

// Runs fn(condition) for each selected condition, optionally in parallel.
template <typename Fn>
void for_each_condition(const ExperimentConfig& cfg, Fn&& fn) {
    auto conds = cfg.selected_conditions();
    const int threads = cfg.deterministic ? 1 : cfg.threads;
    if (threads <= 1 || conds.size() <= 1) {
        for (auto c : conds) fn(c);
        return;
    }
    std::vector<std::future<void>> futures;
    for (auto c : conds)
        futures.push_back(std::async(std::launch::async, [&fn, c] { fn(c); }));
    for (auto& f : futures) f.get();
}

}  // namespace detail

// ---- stages ----

inline void run_lexicon(const ExperimentConfig& cfg, std::ostream& log) {
    std::vector<std::pair<std::string, detail::FileKind>> outputs = {
        {StagePaths::freq_table(cfg, LanguageTag::L1),
         detail::FileKind::Comment},
        {StagePaths::freq_table(cfg, LanguageTag::L2),
         detail::FileKind::Comment},
        {StagePaths::lexicon_entries(cfg), detail::FileKind::Comment},
    };
    for (auto c : all_conditions())
        outputs.push_back(
            {StagePaths::manifest(cfg, c), detail::FileKind::Json});
    if (detail::outputs_current(cfg, outputs)) {
        log << "lexicon: outputs current, skipping\n";
        return;
    }

    auto corpora = detail::load_corpora(cfg);
    auto freq_l1 = count_frequencies(corpora.l1_train);
    auto freq_l2 = count_frequencies(corpora.l2_train);
    detail::stage_dir(cfg, "corpus");
    const std::string meta = detail::meta_comment(cfg);
    write_file(StagePaths::freq_table(cfg, LanguageTag::L1),
               frequency_table_tsv(freq_l1, meta));
    write_file(StagePaths::freq_table(cfg, LanguageTag::L2),
               frequency_table_tsv(freq_l2, meta));

    auto overlap = find_overlap(freq_l1, freq_l2);
    auto annotations = detail::load_annotations(cfg);
    auto entries = classify(overlap, annotations);
    detail::stage_dir(cfg, "lexicon");
    {
        std::string tsv = meta;
        for (const auto& e : entries)
            tsv += e.form + "\t" + klass_name(e.klass) + "\t" + e.source + "\n";
        write_file(StagePaths::lexicon_entries(cfg), tsv);
    }

    auto punct = detail::punct_forms(freq_l1, freq_l2);
    auto controls = detail::control_forms(annotations);
    for (auto c : all_conditions()) {
        auto manifest =
            build_manifest(c, entries, overlap, punct, cfg.ne_marker_forms,
                           controls, &freq_l1, &freq_l2);
        json j = manifest_to_json(manifest);
        detail::attach_meta(j, cfg);
        write_file(StagePaths::manifest(cfg, c), j.dump(2) + "\n");
        for (const auto& w : manifest.warnings) log << "lexicon: " << w << "\n";
    }
    log << "lexicon: wrote frequency tables, entries and 4 manifests\n";
}

inline void run_tokenize(const ExperimentConfig& cfg, std::ostream& log) {
    for (auto c : all_conditions())
        detail::require_dependency(cfg, StagePaths::manifest(cfg, c),
                                   detail::FileKind::Json, "lexicon");
    std::vector<std::pair<std::string, detail::FileKind>> outputs;
    for (auto c : cfg.selected_conditions()) {
        outputs.push_back(
            {StagePaths::tokenizer(cfg, c), detail::FileKind::Json});
        outputs.push_back(
            {StagePaths::vocab_report(cfg, c), detail::FileKind::Json});
    }
    if (detail::outputs_current(cfg, outputs)) {
        log << "tokenize: outputs current, skipping\n";
        return;
    }

    auto corpora = detail::load_corpora(cfg);
    std::map<Condition, ConditionManifest> manifests;
    for (auto c : all_conditions())
        manifests[c] = manifest_from_json(
            json::parse(read_file(StagePaths::manifest(cfg, c))));
    const auto& forced = manifests.begin()->second.forced_single;

    auto bpe = train_bpe({&corpora.l1_train, &corpora.l2_train},
                         cfg.vocab_size, cfg.min_frequency, forced);
    auto ne_texts =
        extract_ne_texts({&corpora.l1_train, &corpora.l2_train});
    auto ne_bpe =
        train_ne_bpe(ne_texts, cfg.ne_vocab_size, cfg.ne_min_frequency);

    detail::stage_dir(cfg, "tokenizer");
    for (auto c : cfg.selected_conditions()) {
        auto vocab = ConditionVocabulary::build(bpe, ne_bpe, manifests[c]);
        json j = vocab.to_json();
        detail::attach_meta(j, cfg);
        write_file(StagePaths::tokenizer(cfg, c), j.dump() + "\n");
        json rep = vocab_report(vocab);
        detail::attach_meta(rep, cfg);
        write_file(StagePaths::vocab_report(cfg, c), rep.dump(2) + "\n");
        log << "tokenize: condition " << condition_name(c) << " size "
            << vocab.size() << "\n";
    }
}

inline void run_train(const ExperimentConfig& cfg, std::ostream& log) {
    for (auto c : cfg.selected_conditions())
        detail::require_dependency(cfg, StagePaths::tokenizer(cfg, c),
                                   detail::FileKind::Json, "tokenize");
    std::vector<std::pair<std::string, detail::FileKind>> outputs;
    for (auto c : cfg.selected_conditions()) {
        outputs.push_back(
            {StagePaths::checkpoint(cfg, c), detail::FileKind::Checkpoint});
        outputs.push_back(
            {StagePaths::loss_csv(cfg, c), detail::FileKind::Comment});
    }
    if (detail::outputs_current(cfg, outputs)) {
        log << "train: outputs current, skipping\n";
        return;
    }

    auto corpora = detail::load_corpora(cfg);
    detail::stage_dir(cfg, "train");
    detail::for_each_condition(cfg, [&](Condition c) {
        auto vocab = ConditionVocabulary::from_json(
            json::parse(read_file(StagePaths::tokenizer(cfg, c))));
        TokenStreams streams;
        streams.l1_train = pack_stream(corpora.l1_train, vocab);
        streams.l2_train = pack_stream(corpora.l2_train, vocab);
        apply_l1_fraction(streams.l1_train, streams.l2_train,
                          cfg.train.l1_fraction);
        streams.l1_test = pack_stream(corpora.l1_test, vocab);
        streams.l2_test = pack_stream(corpora.l2_test, vocab);

        ModelConfig mc = cfg.model;
        if (mc.vocab_size == 0) mc.vocab_size = vocab.size();
        if (mc.vocab_size != vocab.size())
            throw ConfigError("model.vocab_size does not match vocabulary (" +
                              std::to_string(vocab.size()) + ")");
        auto ckpt = init_model(mc);
        auto loss_log = train(ckpt, streams, cfg.train);
        json extra = {{"config_hash", cfg.config_hash()},
                      {"version", kVersion},
                      {"condition", condition_name(c)}};
        save_checkpoint(ckpt, StagePaths::checkpoint(cfg, c), extra);
        write_file(StagePaths::loss_csv(cfg, c),
                   loss_log.to_csv(detail::meta_comment(cfg)));
        log << "train: condition " << condition_name(c) << " steps "
            << ckpt.step_counter << " final loss "
            << (loss_log.steps.empty() ? 0.0 : loss_log.steps.back().loss)
            << "\n";
    });
}

namespace detail {

struct StudyInputs {
    std::string name;  // "friend" or "falsefriend"
    std::vector<StimulusItem> items;
};

inline std::vector<StudyInputs> load_studies(const ExperimentConfig& cfg) {
    std::vector<StudyInputs> studies;
    if (!cfg.stimuli_friend_path.empty())
        studies.push_back(
            {"friend", parse_stimuli(read_file(cfg.stimuli_friend_path),
                                     cfg.langs, cfg.stimuli_friend_path)});
    if (!cfg.stimuli_falsefriend_path.empty())
        studies.push_back({"falsefriend",
                           parse_stimuli(read_file(cfg.stimuli_falsefriend_path),
                                         cfg.langs,
                                         cfg.stimuli_falsefriend_path)});
    return studies;
}

inline int sentence_word_count(const StimulusItem& item) {
    int n = static_cast<int>(word_tokenize(item.prefix).size()) + 1;
    if (!item.continuation.empty())
        n += static_cast<int>(word_tokenize(item.continuation).size());
    return n;
}

}  // namespace detail

inline void run_probe(const ExperimentConfig& cfg, std::ostream& log) {
    for (auto c : cfg.selected_conditions()) {
        detail::require_dependency(cfg, StagePaths::tokenizer(cfg, c),
                                   detail::FileKind::Json, "tokenize");
        detail::require_dependency(cfg, StagePaths::checkpoint(cfg, c),
                                   detail::FileKind::Checkpoint, "train");
    }
    auto studies = detail::load_studies(cfg);
    if (studies.empty())
        throw ConfigError("probe: no stimulus files configured");
    std::vector<std::pair<std::string, detail::FileKind>> outputs;
    for (auto c : cfg.selected_conditions()) {
        if (cfg.probes.surprisal)
            outputs.push_back({StagePaths::surprisal_csv(cfg, c),
                               detail::FileKind::Comment});
        if (cfg.probes.similarity)
            outputs.push_back({StagePaths::similarity_csv(cfg, c),
                               detail::FileKind::Comment});
    }
    if (detail::outputs_current(cfg, outputs)) {
        log << "probe: outputs current, skipping\n";
        return;
    }

    auto corpora = detail::load_corpora(cfg);
    detail::stage_dir(cfg, "probe");
    const std::string meta = detail::meta_comment(cfg);

    detail::for_each_condition(cfg, [&](Condition c) {
        auto vocab = ConditionVocabulary::from_json(
            json::parse(read_file(StagePaths::tokenizer(cfg, c))));
        auto ckpt = load_checkpoint(StagePaths::checkpoint(cfg, c));

        if (cfg.probes.surprisal) {
            std::vector<SurprisalRow> rows;
            for (const auto& study : studies) {
                for (const auto& item : study.items) {
                    for (auto which : {WordCategory::Experimental,
                                       WordCategory::Control}) {
                        auto rec = surprisal(ckpt, vocab, item, which);
                        SurprisalRow row;
                        row.study = study.name;
                        row.condition = c;
                        row.item_id = rec.item_id;
                        row.lang = rec.lang;
                        row.category = which;
                        row.word = rec.word;
                        row.word_index = rec.word_index;
                        row.sentence_words = detail::sentence_word_count(item);
                        row.surprisal_bits = rec.surprisal_bits;
                        row.layer = ckpt.config.n_layers;
                        row.seed = cfg.probes.seed;
                        rows.push_back(std::move(row));
                    }
                }
            }
            write_file(StagePaths::surprisal_csv(cfg, c),
                       surprisal_rows_to_csv(rows, cfg.langs, meta));
        }

        if (cfg.probes.similarity) {
            std::vector<int> layers = cfg.probes.layers;
            if (layers.empty()) layers = {ckpt.config.n_layers};
            // probe words: experimental targets across studies
            std::vector<std::string> words;
            {
                std::set<std::string> seen;
                for (const auto& study : studies)
                    for (const auto& item : study.items)
                        if (seen.insert(uni::lowercase(item.target_exp)).second)
                            words.push_back(uni::lowercase(item.target_exp));
            }
            DocumentStore combined;
            combined.docs = corpora.l1_train.docs;
            combined.docs.insert(combined.docs.end(),
                                 corpora.l2_train.docs.begin(),
                                 corpora.l2_train.docs.end());
            std::vector<SimilarityRow> rows;
            for (int layer : layers) {
                auto std_model = calibrate_standardizer(
                    ckpt, vocab, combined, layer,
                    static_cast<size_t>(cfg.probes.n_calibration),
                    cfg.probes.seed);
                for (const auto& word : words) {
                    auto s1 = sample_sentences(
                        corpora.l1_train, word,
                        static_cast<size_t>(cfg.probes.n_sentences),
                        cfg.probes.seed);
                    auto s2 = sample_sentences(
                        corpora.l2_train, word,
                        static_cast<size_t>(cfg.probes.n_sentences),
                        cfg.probes.seed + 1);
                    if (s1.doc_indices.empty() || s2.doc_indices.empty()) {
                        SimilarityRow row{c, layer, cfg.probes.seed, word,
                                          "word", 0.0, s1.doc_indices.size(),
                                          s2.doc_indices.size(),
                                          "skipped: word absent in one language"};
                        rows.push_back(row);
                        continue;
                    }
                    // per-language identities feeding the probe must be
                    // disjoint embedding rows for separated words
                    const VocabEntry* entry = vocab.find(word);
                    if (entry &&
                        entry->identity == TokenIdentity::PerLanguage &&
                        entry->id_l1 == entry->id_l2)
                        throw DataError("per-language ids collide for " + word);
                    for (auto kind : {PoolKind::Context, PoolKind::Word}) {
                        auto e1 = pooled_embedding(ckpt, vocab, std_model,
                                                   corpora.l1_train,
                                                   s1.doc_indices, word, layer,
                                                   kind);
                        auto e2 = pooled_embedding(ckpt, vocab, std_model,
                                                   corpora.l2_train,
                                                   s2.doc_indices, word, layer,
                                                   kind);
                        SimilarityRow row;
                        row.condition = c;
                        row.layer = layer;
                        row.seed = cfg.probes.seed;
                        row.word = word;
                        row.kind = kind == PoolKind::Context ? "context" : "word";
                        row.n_l1 = e1.n_sentences;
                        row.n_l2 = e2.n_sentences;
                        if (e1.n_sentences == 0 || e2.n_sentences == 0) {
                            row.note = "skipped: empty pool";
                        } else {
                            row.cosine = cosine_similarity(e1.mean, e2.mean);
                        }
                        rows.push_back(std::move(row));
                    }
                }
            }
            write_file(StagePaths::similarity_csv(cfg, c),
                       similarity_rows_to_csv(rows, meta));
        }
        log << "probe: condition " << condition_name(c) << " done\n";
    });
}

}  // namespace bilex
