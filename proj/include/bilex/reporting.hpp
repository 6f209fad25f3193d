#pragma once

#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bilex/stages.hpp"

namespace bilex {

namespace detail {

inline LanguageTag study_language(const std::string& study) {
    // the friend study reads L2 sentences, the false-friend study L1
    return study == "friend" ? LanguageTag::L2 : LanguageTag::L1;
}

struct StudyRecords {
    std::string study;
    std::vector<SurprisalObs> obs;
};

// Joins surprisal rows with per-language frequency z-scores. FreqS is the
// sentence language of the study, FreqO the other language; z-scores are
// computed over the study's word support.
inline std::vector<StudyRecords> join_frequency(
    const std::vector<SurprisalRow>& rows, const FrequencyTable& freq_l1,
    const FrequencyTable& freq_l2) {
    std::map<std::string, std::vector<const SurprisalRow*>> by_study;
    for (const auto& r : rows) by_study[r.study].push_back(&r);
    std::vector<StudyRecords> out;
    for (auto& [study, study_rows] : by_study) {
        std::set<std::string> support;
        for (const auto* r : study_rows) support.insert(r->word);
        const LanguageTag s_lang = study_language(study);
        const FrequencyTable& fs =
            s_lang == LanguageTag::L1 ? freq_l1 : freq_l2;
        const FrequencyTable& fo =
            s_lang == LanguageTag::L1 ? freq_l2 : freq_l1;
        auto zs = log_normalize(fs, support);
        auto zo = log_normalize(fo, support);
        StudyRecords rec;
        rec.study = study;
        for (const auto* r : study_rows) {
            SurprisalObs o;
            o.item_id = r->item_id;
            o.category = r->category;
            o.condition = r->condition;
            o.word = r->word;
            o.surprisal_bits = r->surprisal_bits;
            o.word_index = r->word_index;
            o.word_index_norm =
                static_cast<double>(r->word_index) /
                static_cast<double>(std::max(1, r->sentence_words));
            o.freq_s = zs.values.at(r->word);
            o.freq_o = zo.values.at(r->word);
            rec.obs.push_back(std::move(o));
        }
        out.push_back(std::move(rec));
    }
    return out;
}

inline std::vector<SurprisalObs> filter_conditions(
    const std::vector<SurprisalObs>& obs, const std::set<Condition>& keep) {
    std::vector<SurprisalObs> out;
    for (const auto& o : obs)
        if (keep.count(o.condition)) out.push_back(o);
    return out;
}

inline double mean_surprisal(const std::vector<SurprisalObs>& obs,
                             WordCategory cat) {
    double sum = 0.0;
    int n = 0;
    for (const auto& o : obs) {
        if (o.category == cat) {
            sum += o.surprisal_bits;
            ++n;
        }
    }
    return n > 0 ? sum / n : 0.0;
}

inline const WaldTest* find_test(const std::vector<WaldTest>& tests,
                                 const std::string& term) {
    for (const auto& t : tests)
        if (t.term == term) return &t;
    return nullptr;
}

inline std::string fmt(double v, int prec = 3) {
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(prec) << v;
    return ss.str();
}

}  // namespace detail

// Per study and condition: surp ~ WordCategory + WordIndex + (1|Item),
// REML for reporting. Pooled sharing conditions then enter the frequency
// ladder (+FreqS, +FreqO) compared by ML likelihood-ratio tests.
inline void run_stats(const ExperimentConfig& cfg, std::ostream& log) {
    for (auto c : cfg.selected_conditions())
        detail::require_dependency(cfg, StagePaths::surprisal_csv(cfg, c),
                                   detail::FileKind::Comment, "probe");
    detail::require_dependency(cfg,
                               StagePaths::freq_table(cfg, LanguageTag::L1),
                               detail::FileKind::Comment, "lexicon");
    detail::require_dependency(cfg,
                               StagePaths::freq_table(cfg, LanguageTag::L2),
                               detail::FileKind::Comment, "lexicon");

    std::vector<SurprisalRow> rows;
    for (auto c : cfg.selected_conditions()) {
        auto part = surprisal_rows_from_csv(
            read_file(StagePaths::surprisal_csv(cfg, c)), cfg.langs);
        rows.insert(rows.end(), part.begin(), part.end());
    }
    if (rows.empty()) throw StageError("stats: no surprisal records");
    {
        std::set<std::string> studies;
        for (const auto& r : rows) studies.insert(r.study);
        if (cfg.condition == "all" && studies.size() != 2)
            throw ConfigError(
                "stats: condition 'all' requires both studies (friend and "
                "falsefriend stimuli)");
    }

    auto freq_l1 = frequency_table_from_tsv(
        read_file(StagePaths::freq_table(cfg, LanguageTag::L1)),
        LanguageTag::L1);
    auto freq_l2 = frequency_table_from_tsv(
        read_file(StagePaths::freq_table(cfg, LanguageTag::L2)),
        LanguageTag::L2);
    auto studies = detail::join_frequency(rows, freq_l1, freq_l2);

    detail::stage_dir(cfg, "stats");
    std::string summary = "# Surprisal regressions\n\n";
    summary += "Model: surprisal ~ WordCategory + WordIndex + (1|Item), "
               "REML; WordCategory sum-coded +1 experimental / -1 control. "
               "p-values: normal-approximation Wald tests.\n\n";
    summary += "| study | condition | mean exp | mean ctl | beta(WordCat) | "
               "se | t | p | sig |\n";
    summary += "|---|---|---|---|---|---|---|---|---|\n";

    int n_fits = 0;
    for (const auto& study : studies) {
        for (auto c : cfg.selected_conditions()) {
            auto obs = detail::filter_conditions(study.obs, {c});
            if (obs.empty()) continue;
            RegressionSpec spec;
            spec.fixed_terms = {Term::WordCategory, Term::WordIndex};
            auto design = build_design(obs, spec);
            auto fit = fit_mixed(design, FitCriterion::REML);
            json j = fit_to_json(fit);
            j["study"] = study.study;
            j["condition"] = condition_name(c);
            detail::attach_meta(j, cfg);
            write_file(StagePaths::fit_json(cfg, study.study, c),
                       j.dump(2) + "\n");
            ++n_fits;

            auto tests = wald_tests(fit);
            const auto* wc = detail::find_test(tests, "WordCategory");
            summary += "| " + study.study + " | " + condition_name(c) + " | " +
                       detail::fmt(detail::mean_surprisal(
                           obs, WordCategory::Experimental)) +
                       " | " +
                       detail::fmt(
                           detail::mean_surprisal(obs, WordCategory::Control)) +
                       " | ";
            if (wc) {
                summary += detail::fmt(wc->beta) + " | " + detail::fmt(wc->se) +
                           " | " + detail::fmt(wc->t, 2) + " | " +
                           detail::fmt(wc->p, 4) + " | " +
                           (wc->p < 0.05 ? "*" : "") + " |\n";
            } else {
                summary += "- | - | - | - | - |\n";
            }
        }
    }
    log << "stats: wrote " << n_fits << " per-condition fits\n";

    // frequency ladder over the pooled sharing conditions
    summary += "\n# Frequency predictors (ML, likelihood-ratio tests)\n\n";
    for (const auto& study : studies) {
        const std::set<Condition> pool =
            study.study == "friend"
                ? std::set<Condition>{Condition::A_full, Condition::B_friends}
                : std::set<Condition>{Condition::A_full,
                                      Condition::C_falsefriends};
        std::set<Condition> selected(cfg.selected_conditions().begin(),
                                     cfg.selected_conditions().end());
        bool have_pool = true;
        for (auto c : pool) have_pool = have_pool && selected.count(c) > 0;
        if (!have_pool) {
            summary += "study " + study.study +
                       ": frequency ladder skipped (needs conditions A and " +
                       (study.study == "friend" ? "B" : "C") + ")\n";
            continue;
        }
        auto obs = detail::filter_conditions(study.obs, pool);
        RegressionSpec m0;
        m0.fixed_terms = {Term::WordCategory, Term::Vocabulary,
                          Term::WordIndex};
        m0.word_index_normalized = true;
        RegressionSpec m1 = m0;
        m1.fixed_terms.insert(m1.fixed_terms.begin(), Term::FreqS);
        RegressionSpec m2 = m1;
        m2.fixed_terms.insert(m2.fixed_terms.begin(), Term::FreqO);
        auto f0 = fit_mixed(build_design(obs, m0), FitCriterion::ML);
        auto f1 = fit_mixed(build_design(obs, m1), FitCriterion::ML);
        auto f2 = fit_mixed(build_design(obs, m2), FitCriterion::ML);
        auto l01 = lrt(f0, f1);
        auto l12 = lrt(f1, f2);
        const MixedModelFit* fits[3] = {&f0, &f1, &f2};
        for (int i = 0; i < 3; ++i) {
            json j = fit_to_json(*fits[i]);
            j["study"] = study.study;
            j["model_step"] = i;
            detail::attach_meta(j, cfg);
            write_file(StagePaths::freq_fit_json(cfg, study.study, i),
                       j.dump(2) + "\n");
        }
        json jl;
        jl["study"] = study.study;
        jl["freq_s"] = {{"chi2", l01.chi2}, {"df", l01.df},
                        {"p", l01.p_value}};
        jl["freq_o"] = {{"chi2", l12.chi2}, {"df", l12.df},
                        {"p", l12.p_value}};
        detail::attach_meta(jl, cfg);
        write_file(StagePaths::lrt_json(cfg, study.study), jl.dump(2) + "\n");
        summary += "study " + study.study + ": adding FreqS chi2(" +
                   std::to_string(l01.df) + ")=" + detail::fmt(l01.chi2, 3) +
                   ", p=" + detail::fmt(l01.p_value, 4) +
                   "; adding FreqO chi2(" + std::to_string(l12.df) + ")=" +
                   detail::fmt(l12.chi2, 3) + ", p=" +
                   detail::fmt(l12.p_value, 4) + "\n";
        log << "stats: " << study.study << " LRT freq_s p=" << l01.p_value
            << " freq_o p=" << l12.p_value << "\n";
    }
    summary += "\n" + detail::meta_comment(cfg);
    write_file(StagePaths::stats_summary(cfg), summary);
}

// Collates vocabulary/parameter tables, surprisal contrasts with
// significance markers and cross-lingual similarity tables into one
// markdown report. Inputs with mismatching config hashes are refused.
inline void run_report(const ExperimentConfig& cfg, std::ostream& log) {
    auto conds = cfg.selected_conditions();
    for (auto c : conds) {
        detail::require_dependency(cfg, StagePaths::vocab_report(cfg, c),
                                   detail::FileKind::Json, "tokenize");
        detail::require_dependency(cfg, StagePaths::surprisal_csv(cfg, c),
                                   detail::FileKind::Comment, "probe");
        if (cfg.probes.similarity)
            detail::require_dependency(cfg, StagePaths::similarity_csv(cfg, c),
                                       detail::FileKind::Comment, "probe");
        detail::require_dependency(cfg, StagePaths::loss_csv(cfg, c),
                                   detail::FileKind::Comment, "train");
    }
    detail::require_dependency(cfg, StagePaths::stats_summary(cfg),
                               detail::FileKind::Comment, "stats");

    std::string md = "# Bilingual vocabulary-sharing report\n\n";

    md += "## Vocabulary and model sizes\n\n";
    md += "| condition | vocab size | shared | per-language | forced shared "
          "| parameters |\n|---|---|---|---|---|---|\n";
    std::map<Condition, json> vreports;
    for (auto c : conds) {
        json vr = json::parse(read_file(StagePaths::vocab_report(cfg, c)));
        vreports[c] = vr;
        ModelConfig mc = cfg.model;
        mc.vocab_size = vr.at("size").get<int>();
        md += std::string("| ") + condition_name(c) + " | " +
              std::to_string(vr.at("size").get<int>()) + " | " +
              std::to_string(vr.at("shared").at("total").get<int>()) + " | " +
              std::to_string(vr.at("per_language").at("total").get<int>()) +
              " | " +
              std::to_string(vr.at("shared").at("forced").get<int>()) + " | " +
              std::to_string(count_parameters(mc)) + " |\n";
    }
    if (vreports.count(Condition::D_minimal) &&
        vreports.count(Condition::B_friends)) {
        const int dd = vreports[Condition::D_minimal]["size"].get<int>() -
                       vreports[Condition::B_friends]["size"].get<int>();
        const int fshared =
            vreports[Condition::B_friends]["shared"]["forced"].get<int>() -
            vreports[Condition::D_minimal]["shared"]["forced"].get<int>();
        md += "\nD - B vocabulary delta = " + std::to_string(dd) +
              " (friend forms shared in B: " + std::to_string(fshared) +
              ")\n";
    }
    if (vreports.count(Condition::D_minimal) &&
        vreports.count(Condition::C_falsefriends)) {
        const int dd = vreports[Condition::D_minimal]["size"].get<int>() -
                       vreports[Condition::C_falsefriends]["size"].get<int>();
        const int fshared =
            vreports[Condition::C_falsefriends]["shared"]["forced"]
                .get<int>() -
            vreports[Condition::D_minimal]["shared"]["forced"].get<int>();
        md += "D - C vocabulary delta = " + std::to_string(dd) +
              " (false-friend forms shared in C: " + std::to_string(fshared) +
              ")\n";
    }
    md += "\nHead weights are " +
          std::string(cfg.model.tied_head ? "tied to" : "untied from") +
          " the embedding matrix; parameter counts reflect that.\n";

    md += "\n## Surprisal contrasts\n\n";
    // mean surprisal per study x condition x category with markers from fits
    std::vector<SurprisalRow> rows;
    for (auto c : conds) {
        auto part = surprisal_rows_from_csv(
            read_file(StagePaths::surprisal_csv(cfg, c)), cfg.langs);
        rows.insert(rows.end(), part.begin(), part.end());
    }
    std::set<std::string> studies;
    for (const auto& r : rows) studies.insert(r.study);
    md += "| study | condition | mean exp (bits) | mean ctl (bits) | delta | "
          "sig |\n|---|---|---|---|---|---|\n";
    for (const auto& study : studies) {
        for (auto c : conds) {
            double se = 0, sc = 0;
            int ne = 0, nc = 0;
            for (const auto& r : rows) {
                if (r.study != study || r.condition != c) continue;
                if (r.category == WordCategory::Experimental) {
                    se += r.surprisal_bits;
                    ++ne;
                } else {
                    sc += r.surprisal_bits;
                    ++nc;
                }
            }
            if (ne == 0 || nc == 0) continue;
            const double me = se / ne, mc2 = sc / nc;
            std::string sig = "";
            const std::string fit_path = StagePaths::fit_json(cfg, study, c);
            if (file_exists(fit_path)) {
                json fj = json::parse(read_file(fit_path));
                const auto& terms = fj.at("terms");
                for (size_t i = 0; i < terms.size(); ++i) {
                    if (terms[i].get<std::string>() == "WordCategory" &&
                        fj.at("p")[i].get<double>() < 0.05)
                        sig = "*";
                }
            }
            md += "| " + study + " | " + condition_name(c) + " | " +
                  detail::fmt(me) + " | " + detail::fmt(mc2) + " | " +
                  detail::fmt(me - mc2) + " | " + sig + " |\n";
        }
    }
    md += "\n`*`: WordCategory p < .05 in the per-condition mixed model.\n";

    if (cfg.probes.similarity) {
        md += "\n## Cross-lingual similarity\n\n";
        md += "| condition | layer | kind | mean cosine | words |\n"
              "|---|---|---|---|---|\n";
        for (auto c : conds) {
            auto sim = similarity_rows_from_csv(
                read_file(StagePaths::similarity_csv(cfg, c)));
            std::map<std::pair<int, std::string>, std::pair<double, int>> agg;
            for (const auto& r : sim) {
                if (!r.note.empty()) continue;
                auto& slot = agg[{r.layer, r.kind}];
                slot.first += r.cosine;
                slot.second += 1;
            }
            for (const auto& [key, val] : agg) {
                md += std::string("| ") + condition_name(c) + " | " +
                      std::to_string(key.first) + " | " + key.second + " | " +
                      detail::fmt(val.first / val.second) + " | " +
                      std::to_string(val.second) + " |\n";
            }
        }
    }

    md += "\n## Held-out loss (end of training)\n\n";
    md += "| condition | eval l1 (nats) | eval l2 (nats) |\n|---|---|---|\n";
    for (auto c : conds) {
        const std::string content = read_file(StagePaths::loss_csv(cfg, c));
        double l1 = -1, l2 = -1;
        size_t pos = 0;
        while (pos < content.size()) {
            size_t eol = content.find('\n', pos);
            if (eol == std::string::npos) eol = content.size();
            std::string line = content.substr(pos, eol - pos);
            pos = eol + 1;
            auto cells = split(line, ',');
            if (cells.size() == 4 && cells[2] == "eval_l1")
                l1 = std::stod(cells[3]);
            if (cells.size() == 4 && cells[2] == "eval_l2")
                l2 = std::stod(cells[3]);
        }
        md += std::string("| ") + condition_name(c) + " | " +
              (l1 >= 0 ? detail::fmt(l1) : "-") + " | " +
              (l2 >= 0 ? detail::fmt(l2) : "-") + " |\n";
    }

    md += "\n---\n" + detail::meta_comment(cfg);
    write_file(StagePaths::report(cfg), md);
    log << "report: wrote " << StagePaths::report(cfg) << "\n";
}

}  // namespace bilex
