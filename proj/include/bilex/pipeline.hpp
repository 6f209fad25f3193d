#pragma once

#include <filesystem>
#include <future>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "bilex/common.hpp"
#include "bilex/corpus.hpp"
#include "bilex/lexicon.hpp"
#include "bilex/mixed_model.hpp"
#include "bilex/model.hpp"
#include "bilex/probes.hpp"
#include "bilex/synth.hpp"
#include "bilex/train.hpp"
#include "bilex/version.hpp"
#include "bilex/vocabulary.hpp"

namespace bilex {

struct ProbeSettings {
    std::vector<int> layers;  // empty: use n_layers
    int n_sentences = 500;
    int n_calibration = 30000;
    std::uint64_t seed = 0;
    bool surprisal = true;
    bool similarity = true;
};

struct ExperimentConfig {
    LanguagePair langs;
    std::string corpus_l1, corpus_l2;
    std::string corpus_l1_test, corpus_l2_test;  // optional
    std::vector<std::string> annotation_paths;
    std::string stimuli_friend_path, stimuli_falsefriend_path;  // >= 1 needed
    std::string out_dir;
    std::string condition = "all";  // "A".."D" or "all"
    int vocab_size = 2000;
    int min_frequency = 2;
    int ne_vocab_size = 400;
    int ne_min_frequency = 2;
    ModelConfig model;
    TrainConfig train;
    ProbeSettings probes;
    std::set<std::string> ne_marker_forms;
    int threads = 1;
    bool deterministic = false;

    std::vector<Condition> selected_conditions() const {
        if (condition == "all") return all_conditions();
        return {parse_condition(condition)};
    }

    json to_json() const {
        json j;
        j["languages"] = {{"l1", langs.l1_name}, {"l2", langs.l2_name}};
        json paths;
        paths["corpus_l1"] = corpus_l1;
        paths["corpus_l2"] = corpus_l2;
        if (!corpus_l1_test.empty()) paths["corpus_l1_test"] = corpus_l1_test;
        if (!corpus_l2_test.empty()) paths["corpus_l2_test"] = corpus_l2_test;
        paths["annotations"] = annotation_paths;
        if (!stimuli_friend_path.empty())
            paths["stimuli_friend"] = stimuli_friend_path;
        if (!stimuli_falsefriend_path.empty())
            paths["stimuli_falsefriend"] = stimuli_falsefriend_path;
        paths["out_dir"] = out_dir;
        j["paths"] = std::move(paths);
        j["condition"] = condition;
        j["tokenizer"] = {{"vocab_size", vocab_size},
                          {"min_frequency", min_frequency},
                          {"ne_vocab_size", ne_vocab_size},
                          {"ne_min_frequency", ne_min_frequency}};
        j["model"] = model.to_json();
        j["train"] = train.to_json();
        j["probes"] = {
            {"layers", probes.layers},   {"n_sentences", probes.n_sentences},
            {"n_calibration", probes.n_calibration}, {"seed", probes.seed},
            {"surprisal", probes.surprisal}, {"similarity", probes.similarity}};
        if (!ne_marker_forms.empty())
            j["ne_marker_forms"] = std::vector<std::string>(
                ne_marker_forms.begin(), ne_marker_forms.end());
        return j;
    }

    // Content hash over the resolved config. The condition field is
    // excluded (outputs of different conditions of one experiment collate
    // together), as are the output root and runtime-only knobs (threads,
    // deterministic).
    std::string config_hash() const {
        json j = to_json();
        j.erase("condition");
        j["paths"].erase("out_dir");
        return hex64(fnv1a64(j.dump()));
    }
};

namespace detail {

inline void require_seed(const json& j, const char* section) {
    if (!j.contains("seed"))
        throw ConfigError(std::string(section) +
                          ".seed must be explicit in the config");
}

}  // namespace detail

inline ExperimentConfig config_from_json(const json& j,
                                         const std::string& base_dir = {}) {
    ExperimentConfig cfg;
    auto resolve = [&](const std::string& p) {
        if (p.empty() || base_dir.empty()) return p;
        std::filesystem::path fp(p);
        if (fp.is_absolute()) return p;
        return (std::filesystem::path(base_dir) / fp).string();
    };
    try {
        if (j.contains("languages")) {
            cfg.langs.l1_name = j["languages"].value("l1", "nl");
            cfg.langs.l2_name = j["languages"].value("l2", "en");
        }
        const json& paths = j.at("paths");
        cfg.corpus_l1 = resolve(paths.at("corpus_l1").get<std::string>());
        cfg.corpus_l2 = resolve(paths.at("corpus_l2").get<std::string>());
        cfg.corpus_l1_test = resolve(paths.value("corpus_l1_test", ""));
        cfg.corpus_l2_test = resolve(paths.value("corpus_l2_test", ""));
        for (const auto& a : paths.at("annotations"))
            cfg.annotation_paths.push_back(resolve(a.get<std::string>()));
        cfg.stimuli_friend_path = resolve(paths.value("stimuli_friend", ""));
        cfg.stimuli_falsefriend_path =
            resolve(paths.value("stimuli_falsefriend", ""));
        cfg.out_dir = resolve(paths.at("out_dir").get<std::string>());
        cfg.condition = j.value("condition", "all");
        const json& tok = j.at("tokenizer");
        cfg.vocab_size = tok.at("vocab_size").get<int>();
        cfg.min_frequency = tok.value("min_frequency", 2);
        cfg.ne_vocab_size = tok.value("ne_vocab_size", 400);
        cfg.ne_min_frequency = tok.value("ne_min_frequency", 2);
        detail::require_seed(j.at("model"), "model");
        detail::require_seed(j.at("train"), "train");
        cfg.model = ModelConfig::from_json(j.at("model"));
        cfg.train = TrainConfig::from_json(j.at("train"));
        const json& pr = j.at("probes");
        detail::require_seed(pr, "probes");
        if (pr.contains("layers"))
            for (const auto& l : pr["layers"])
                cfg.probes.layers.push_back(l.get<int>());
        cfg.probes.n_sentences = pr.value("n_sentences", 500);
        cfg.probes.n_calibration = pr.value("n_calibration", 30000);
        cfg.probes.seed = pr.at("seed").get<std::uint64_t>();
        cfg.probes.surprisal = pr.value("surprisal", true);
        cfg.probes.similarity = pr.value("similarity", true);
        if (j.contains("ne_marker_forms"))
            for (const auto& f : j["ne_marker_forms"])
                cfg.ne_marker_forms.insert(f.get<std::string>());
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (cfg.condition != "all") parse_condition(cfg.condition);
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw ConfigError("cannot parse config " + path + ": " + e.what());
    } catch (const DataError& e) {
        throw ConfigError(e.what());
    }
    auto cfg = config_from_json(
        j, std::filesystem::path(path).parent_path().string());
    // all referenced paths must exist at validation time
    auto check = [](const std::string& p, const char* what) {
        if (!p.empty() && !file_exists(p))
            throw ConfigError(std::string(what) + " not found: " + p);
    };
    check(cfg.corpus_l1, "corpus_l1");
    check(cfg.corpus_l2, "corpus_l2");
    check(cfg.corpus_l1_test, "corpus_l1_test");
    check(cfg.corpus_l2_test, "corpus_l2_test");
    for (const auto& a : cfg.annotation_paths) check(a, "annotation file");
    check(cfg.stimuli_friend_path, "stimuli_friend");
    check(cfg.stimuli_falsefriend_path, "stimuli_falsefriend");
    return cfg;
}

// ---- output metadata ----

namespace detail {

inline std::string meta_comment(const ExperimentConfig& cfg) {
    return "# config_hash=" + cfg.config_hash() + " version=" + kVersion +
           "\n";
}

inline void attach_meta(json& j, const ExperimentConfig& cfg) {
    j["_meta"] = {{"config_hash", cfg.config_hash()}, {"version", kVersion}};
}

inline std::optional<std::string> file_hash_comment(const std::string& path) {
    if (!file_exists(path)) return std::nullopt;
    const std::string content = read_file(path);
    if (content.rfind("# config_hash=", 0) != 0) return std::nullopt;
    const size_t start = std::string("# config_hash=").size();
    return content.substr(start, 16);
}

inline std::optional<std::string> json_file_hash(const std::string& path) {
    if (!file_exists(path)) return std::nullopt;
    try {
        json j = json::parse(read_file(path));
        if (j.contains("_meta") && j["_meta"].contains("config_hash"))
            return j["_meta"]["config_hash"].get<std::string>();
    } catch (const json::exception&) {
    }
    return std::nullopt;
}

inline std::optional<std::string> checkpoint_hash(const std::string& path) {
    if (!file_exists(path)) return std::nullopt;
    try {
        json meta;
        load_checkpoint(path, &meta);
        if (meta.contains("config_hash"))
            return meta["config_hash"].get<std::string>();
    } catch (const std::exception&) {
    }
    return std::nullopt;
}

enum class FileKind { Comment, Json, Checkpoint };

inline std::optional<std::string> output_hash(const std::string& path,
                                              FileKind kind) {
    switch (kind) {
        case FileKind::Comment: return file_hash_comment(path);
        case FileKind::Json: return json_file_hash(path);
        case FileKind::Checkpoint: return checkpoint_hash(path);
    }
    return std::nullopt;
}

// A stage is current when all its outputs exist and carry this config hash.
inline bool outputs_current(
    const ExperimentConfig& cfg,
    const std::vector<std::pair<std::string, FileKind>>& files) {
    const std::string h = cfg.config_hash();
    for (const auto& [path, kind] : files) {
        auto got = output_hash(path, kind);
        if (!got || *got != h) return false;
    }
    return true;
}

inline void require_dependency(const ExperimentConfig& cfg,
                               const std::string& path, FileKind kind,
                               const std::string& producing_stage) {
    if (!file_exists(path))
        throw StageError("missing dependency " + path + ": run '" +
                         producing_stage + "' first");
    auto got = output_hash(path, kind);
    if (!got)
        throw StageError("dependency " + path + " carries no config hash");
    if (*got != cfg.config_hash())
        throw StageError("dependency " + path + " was produced with config " +
                         *got + ", current config is " + cfg.config_hash());
}

inline std::string stage_dir(const ExperimentConfig& cfg,
                             const std::string& stage) {
    auto dir = std::filesystem::path(cfg.out_dir) / stage;
    std::filesystem::create_directories(dir);
    return dir.string();
}

inline std::string pjoin(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

}  // namespace detail

// ---- stage output paths ----

struct StagePaths {
    static std::string freq_table(const ExperimentConfig& cfg, LanguageTag t) {
        return (std::filesystem::path(cfg.out_dir) / "corpus" /
                ("freq_" + cfg.langs.name(t) + ".tsv"))
            .string();
    }
    static std::string lexicon_entries(const ExperimentConfig& cfg) {
        return (std::filesystem::path(cfg.out_dir) / "lexicon" / "entries.tsv")
            .string();
    }
    static std::string manifest(const ExperimentConfig& cfg, Condition c) {
        return (std::filesystem::path(cfg.out_dir) / "lexicon" /
                (std::string("manifest_") + condition_name(c) + ".json"))
            .string();
    }
    static std::string tokenizer(const ExperimentConfig& cfg, Condition c) {
        return (std::filesystem::path(cfg.out_dir) / "tokenizer" /
                (std::string("tokenizer_") + condition_name(c) + ".json"))
            .string();
    }
    static std::string vocab_report(const ExperimentConfig& cfg, Condition c) {
        return (std::filesystem::path(cfg.out_dir) / "tokenizer" /
                (std::string("vocab_report_") + condition_name(c) + ".json"))
            .string();
    }
    static std::string checkpoint(const ExperimentConfig& cfg, Condition c) {
        return (std::filesystem::path(cfg.out_dir) / "train" /
                (std::string("checkpoint_") + condition_name(c) + ".blxc"))
            .string();
    }
    static std::string loss_csv(const ExperimentConfig& cfg, Condition c) {
        return (std::filesystem::path(cfg.out_dir) / "train" /
                (std::string("loss_") + condition_name(c) + ".csv"))
            .string();
    }
    static std::string surprisal_csv(const ExperimentConfig& cfg, Condition c) {
        return (std::filesystem::path(cfg.out_dir) / "probe" /
                (std::string("surprisal_") + condition_name(c) + ".csv"))
            .string();
    }
    static std::string similarity_csv(const ExperimentConfig& cfg,
                                      Condition c) {
        return (std::filesystem::path(cfg.out_dir) / "probe" /
                (std::string("similarity_") + condition_name(c) + ".csv"))
            .string();
    }
    static std::string fit_json(const ExperimentConfig& cfg,
                                const std::string& study, Condition c) {
        return (std::filesystem::path(cfg.out_dir) / "stats" /
                ("fit_" + study + "_" + condition_name(c) + ".json"))
            .string();
    }
    static std::string freq_fit_json(const ExperimentConfig& cfg,
                                     const std::string& study, int step) {
        return (std::filesystem::path(cfg.out_dir) / "stats" /
                ("fit_freq_" + study + "_m" + std::to_string(step) + ".json"))
            .string();
    }
    static std::string lrt_json(const ExperimentConfig& cfg,
                                const std::string& study) {
        return (std::filesystem::path(cfg.out_dir) / "stats" /
                ("lrt_" + study + ".json"))
            .string();
    }
    static std::string stats_summary(const ExperimentConfig& cfg) {
        return (std::filesystem::path(cfg.out_dir) / "stats" / "summary.md")
            .string();
    }
    static std::string report(const ExperimentConfig& cfg) {
        return (std::filesystem::path(cfg.out_dir) / "report.md").string();
    }
};

}  // namespace bilex
