#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "bilex/corpus.hpp"
#include "bilex/lexicon.hpp"
#include "bilex/probes.hpp"
#include "bilex/rng.hpp"

namespace bilex {

// Synthetic bilingual corpus with controlled lexical overlap: a designated
// word set appears in both languages with matched sentence-language
// frequencies, plus frequency-matched language-unique controls. The
// other-language exposure of overlapping words is varied on a ladder so
// that frequency-driven effects are identifiable.
struct SynthSpec {
    std::uint64_t seed = 1;
    int n_friends = 10;
    int n_falsefriends = 6;
    int n_fillers = 120;          // language-unique filler words per language
    int l1_train_words = 60000;   // word slots before punctuation
    int l2_train_words = 20000;
    int l1_test_words = 2500;
    int l2_test_words = 2500;
    double special_rate = 0.004;  // per special word, sentence language
    double zipf_s = 1.05;
    double ne_sentence_rate = 0.02;
    int sentence_words_min = 6;
    int sentence_words_max = 11;
    int prefix_words = 4;  // stimulus prefix length
};

struct SynthData {
    LanguagePair langs;
    DocumentStore l1_train, l2_train, l1_test, l2_test;
    AnnotationFile annotations;
    std::vector<StimulusItem> stimuli_friend;       // L2 sentences
    std::vector<StimulusItem> stimuli_falsefriend;  // L1 sentences
    std::vector<std::string> friends;
    std::vector<std::string> falsefriends;
    std::vector<std::string> controls_l1;  // matched to false friends
    std::vector<std::string> controls_l2;  // matched to friends
};

namespace detail {

inline std::string spell(const char* prefix, int i) {
    std::string s = prefix;
    s.push_back(static_cast<char>('a' + (i / 26) % 26));
    s.push_back(static_cast<char>('a' + i % 26));
    return s;
}

struct WordPool {
    std::vector<std::string> words;
    std::vector<double> cumulative;

    const std::string& draw(Rng& rng) const {
        const double u = rng.next_double() * cumulative.back();
        size_t lo = 0, hi = cumulative.size() - 1;
        while (lo < hi) {
            const size_t mid = (lo + hi) / 2;
            if (cumulative[mid] < u)
                lo = mid + 1;
            else
                hi = mid;
        }
        return words[lo];
    }
};

inline WordPool make_pool(const std::vector<std::string>& fillers,
                          double zipf_s,
                          const std::vector<std::pair<std::string, double>>&
                              specials) {
    WordPool pool;
    double special_mass = 0.0;
    for (const auto& [w, r] : specials) special_mass += r;
    double zipf_total = 0.0;
    std::vector<double> zw(fillers.size());
    for (size_t k = 0; k < fillers.size(); ++k) {
        zw[k] = 1.0 / std::pow(static_cast<double>(k + 2), zipf_s);
        zipf_total += zw[k];
    }
    const double filler_mass = std::max(0.05, 1.0 - special_mass);
    double acc = 0.0;
    for (size_t k = 0; k < fillers.size(); ++k) {
        acc += zw[k] / zipf_total * filler_mass;
        pool.words.push_back(fillers[k]);
        pool.cumulative.push_back(acc);
    }
    for (const auto& [w, r] : specials) {
        acc += r;
        pool.words.push_back(w);
        pool.cumulative.push_back(acc);
    }
    return pool;
}

inline const std::vector<std::string>& ne_names() {
    static const std::vector<std::string> names = {
        "Zupra", "Quorn Velt", "Marbex", "Tillow", "Ostrander"};
    return names;
}

inline DocumentStore make_corpus(const WordPool& pool, LanguageTag lang,
                                 const std::string& id_prefix, int word_budget,
                                 double ne_rate, int len_min, int len_max,
                                 Rng& rng) {
    DocumentStore store;
    int words_left = word_budget;
    int doc_no = 0;
    while (words_left > 0) {
        const int len = len_min + static_cast<int>(rng.next_below(
                                      static_cast<std::uint64_t>(
                                          len_max - len_min + 1)));
        Document doc;
        doc.id = id_prefix + std::to_string(doc_no++);
        doc.lang = lang;
        const bool with_ne = rng.next_double() < ne_rate;
        const int ne_slot =
            with_ne ? 1 + static_cast<int>(rng.next_below(
                              static_cast<std::uint64_t>(len)))
                    : -1;
        for (int k = 0; k < len; ++k) {
            if (k > 0) doc.text += ' ';
            if (k == ne_slot) {
                const auto& name = ne_names()[static_cast<size_t>(
                    rng.next_below(ne_names().size()))];
                const size_t begin = doc.text.size();
                doc.text += name;
                doc.ne_spans.push_back({begin, doc.text.size()});
                doc.text += ' ';
            }
            std::string w = pool.draw(rng);
            if (k == 0) w[0] = static_cast<char>(w[0] - 'a' + 'A');
            doc.text += w;
        }
        doc.text += " .";
        words_left -= len;
        store.docs.push_back(std::move(doc));
    }
    return store;
}

}  // namespace detail

inline SynthData make_synthetic(const SynthSpec& spec) {
    Rng rng(spec.seed);
    SynthData data;

    std::vector<std::string> l1_fillers, l2_fillers;
    for (int i = 0; i < spec.n_fillers; ++i) {
        l1_fillers.push_back(detail::spell("da", i));
        l2_fillers.push_back(detail::spell("te", i));
    }
    for (int i = 0; i < spec.n_friends; ++i) {
        data.friends.push_back(detail::spell("ov", i));
        data.controls_l2.push_back(detail::spell("uc", i));
    }
    for (int i = 0; i < spec.n_falsefriends; ++i) {
        data.falsefriends.push_back(detail::spell("hx", i));
        data.controls_l1.push_back(detail::spell("ub", i));
    }

    // other-language exposure ladder
    static const double ladder[] = {0.25, 0.5, 1.0, 2.0, 4.0};
    const double r = spec.special_rate;

    std::vector<std::pair<std::string, double>> l1_specials, l2_specials;
    for (size_t i = 0; i < data.friends.size(); ++i) {
        // friends are probed in L2; L1 is their "other" language
        l2_specials.emplace_back(data.friends[i], r);
        l1_specials.emplace_back(data.friends[i], r * ladder[i % 5]);
        l2_specials.emplace_back(data.controls_l2[i], r);
    }
    for (size_t i = 0; i < data.falsefriends.size(); ++i) {
        // false friends are probed in L1; L2 is their "other" language
        l1_specials.emplace_back(data.falsefriends[i], r);
        l2_specials.emplace_back(data.falsefriends[i], r * ladder[i % 5]);
        l1_specials.emplace_back(data.controls_l1[i], r);
    }

    auto l1_pool = detail::make_pool(l1_fillers, spec.zipf_s, l1_specials);
    auto l2_pool = detail::make_pool(l2_fillers, spec.zipf_s, l2_specials);

    data.l1_train = detail::make_corpus(
        l1_pool, LanguageTag::L1, "nl-", spec.l1_train_words,
        spec.ne_sentence_rate, spec.sentence_words_min,
        spec.sentence_words_max, rng);
    data.l2_train = detail::make_corpus(
        l2_pool, LanguageTag::L2, "en-", spec.l2_train_words,
        spec.ne_sentence_rate, spec.sentence_words_min,
        spec.sentence_words_max, rng);
    data.l1_test = detail::make_corpus(
        l1_pool, LanguageTag::L1, "nlt-", spec.l1_test_words,
        spec.ne_sentence_rate, spec.sentence_words_min,
        spec.sentence_words_max, rng);
    data.l2_test = detail::make_corpus(
        l2_pool, LanguageTag::L2, "ent-", spec.l2_test_words,
        spec.ne_sentence_rate, spec.sentence_words_min,
        spec.sentence_words_max, rng);

    data.annotations.source = "synthetic";
    for (const auto& w : data.friends)
        data.annotations.rows.emplace(w, WordKlass::Friend);
    for (const auto& w : data.falsefriends)
        data.annotations.rows.emplace(w, WordKlass::FalseFriend);
    for (const auto& w : data.controls_l1)
        data.annotations.rows.emplace(w, WordKlass::Control);
    for (const auto& w : data.controls_l2)
        data.annotations.rows.emplace(w, WordKlass::Control);

    auto make_items = [&](const std::vector<std::string>& targets,
                          const std::vector<std::string>& controls,
                          const std::vector<std::string>& fillers,
                          LanguageTag lang, const char* tag) {
        std::vector<StimulusItem> items;
        for (size_t i = 0; i < targets.size(); ++i) {
            StimulusItem item;
            item.item_id = std::string(tag) + std::to_string(i);
            item.lang = lang;
            // vary the target position so word index is a usable predictor
            const int n_prefix = spec.prefix_words + static_cast<int>(i % 3);
            std::string prefix;
            for (int k = 0; k < n_prefix; ++k) {
                std::string w = fillers[static_cast<size_t>(
                    rng.next_below(fillers.size()))];
                if (k == 0) w[0] = static_cast<char>(w[0] - 'a' + 'A');
                if (k > 0) prefix += ' ';
                prefix += w;
            }
            prefix += ' ';
            item.prefix = prefix;
            item.target_exp = targets[i];
            item.target_ctl = controls[i];
            item.word_index = n_prefix + 1;
            items.push_back(std::move(item));
        }
        return items;
    };
    data.stimuli_friend = make_items(data.friends, data.controls_l2,
                                     l2_fillers, LanguageTag::L2, "fr");
    data.stimuli_falsefriend = make_items(data.falsefriends, data.controls_l1,
                                          l1_fillers, LanguageTag::L1, "ff");
    return data;
}

inline std::string store_to_jsonl(const DocumentStore& store,
                                  const LanguagePair& langs) {
    std::string out;
    for (const auto& doc : store.docs) {
        json j;
        j["id"] = doc.id;
        j["text"] = doc.text;
        j["lang"] = langs.name(doc.lang);
        json spans = json::array();
        for (const auto& s : doc.ne_spans)
            spans.push_back({s.begin, s.end});
        j["ne_spans"] = std::move(spans);
        out += j.dump();
        out += '\n';
    }
    return out;
}

inline std::string annotations_to_tsv(const AnnotationFile& file) {
    std::string out;
    for (const auto& [form, klass] : file.rows) {
        out += form;
        out += '\t';
        out += klass_name(klass);
        out += '\n';
    }
    return out;
}

}  // namespace bilex
