#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "bilex/bpe.hpp"
#include "bilex/common.hpp"
#include "bilex/corpus.hpp"
#include "bilex/lexicon.hpp"

namespace bilex {

inline constexpr const char* kEndOfText = "<|endoftext|>";

enum class TokenIdentity { Shared, PerLanguage };

struct VocabEntry {
    std::string token;  // raw bytes
    TokenIdentity identity = TokenIdentity::Shared;
    int id = -1;     // shared id, or -1
    int id_l1 = -1;  // per-language ids, or -1
    int id_l2 = -1;
    // origin flags (an entry can have several)
    bool from_bpe = false;
    bool from_ne = false;
    bool forced = false;
    bool special = false;

    int id_for(LanguageTag lang) const {
        if (identity == TokenIdentity::Shared) return id;
        return lang == LanguageTag::L1 ? id_l1 : id_l2;
    }
};

struct TokenSequence {
    std::vector<int> ids;
    LanguageTag lang = LanguageTag::L1;
    // byte range of each token in the source text (empty ranges for
    // synthetic tokens such as end-of-text)
    std::vector<ByteSpan> offsets;
};

// Token inventory for one condition: main-BPE symbols, NE-BPE symbols and
// forced whole-word tokens, each either Shared (one id) or PerLanguage
// (two ids). Ids are dense: shared entries sorted by token string come
// first, then per-language entries sorted, each occupying two slots
// (L1 then L2).
class ConditionVocabulary {
public:
    ConditionVocabulary() = default;

    static ConditionVocabulary build(BpeModel bpe, BpeModel ne_bpe,
                                     const ConditionManifest& manifest) {
        ConditionVocabulary v;
        v.condition_ = manifest.condition;
        v.bpe_ = std::move(bpe);
        v.ne_bpe_ = std::move(ne_bpe);
        v.forced_forms_ = manifest.forced_single;

        std::map<std::string, VocabEntry> tokens;
        for (auto& s : v.bpe_.symbol_strings()) {
            auto& e = tokens[s];
            e.token = s;
            e.from_bpe = true;
        }
        for (auto& s : v.ne_bpe_.symbol_strings()) {
            auto& e = tokens[s];
            e.token = s;
            e.from_ne = true;
        }
        for (const auto& form : manifest.forced_single) {
            auto& e = tokens[form];
            e.token = form;
            e.forced = true;
        }
        {
            auto& e = tokens[kEndOfText];
            e.token = kEndOfText;
            e.special = true;
        }

        for (auto& [s, e] : tokens) {
            e.identity = v.decide_identity(e, manifest);
        }

        // shared block first, both blocks sorted by token string
        // (std::map iteration is already sorted)
        int next_id = 0;
        for (auto& [s, e] : tokens) {
            if (e.identity == TokenIdentity::Shared) {
                e.id = next_id++;
                v.entries_.push_back(e);
            }
        }
        for (auto& [s, e] : tokens) {
            if (e.identity == TokenIdentity::PerLanguage) {
                e.id_l1 = next_id++;
                e.id_l2 = next_id++;
                v.entries_.push_back(e);
            }
        }
        v.finish_indexes();
        return v;
    }

    Condition condition() const { return condition_; }
    const BpeModel& bpe() const { return bpe_; }
    const BpeModel& ne_bpe() const { return ne_bpe_; }
    const std::vector<VocabEntry>& entries() const { return entries_; }
    const std::set<std::string>& forced_forms() const { return forced_forms_; }

    int size() const { return size_; }

    int eot_id() const { return eot_id_; }

    const VocabEntry* find(const std::string& token) const {
        auto it = index_.find(token);
        return it == index_.end() ? nullptr : &entries_[it->second];
    }

    const VocabEntry& entry_for_id(int id) const {
        if (id < 0 || id >= size_)
            throw DataError("unknown token id: " + std::to_string(id));
        return entries_[id_to_entry_[static_cast<size_t>(id)]];
    }

    // Segmentation pipeline: NE spans through the NE sub-model, standalone
    // forced words as single tokens (with any attached space emitted
    // separately), everything else through main BPE. Byte content is
    // preserved exactly.
    TokenSequence encode(const Document& doc) const {
        TokenSequence seq;
        seq.lang = doc.lang;
        size_t pos = 0;
        for (const auto& span : doc.ne_spans) {
            if (span.begin > pos) encode_gap(doc, pos, span.begin, seq);
            encode_ne_span(doc, span, seq);
            pos = span.end;
        }
        if (pos < doc.text.size()) encode_gap(doc, pos, doc.text.size(), seq);
        return seq;
    }

    TokenSequence encode_text(const std::string& text, LanguageTag lang) const {
        Document d;
        d.text = text;
        d.lang = lang;
        return encode(d);
    }

    std::string decode(const std::vector<int>& ids) const {
        std::string out;
        for (int id : ids) out += entry_for_id(id).token;
        return out;
    }

    // Single token id of a forced form for the given language. Throws if the
    // form is not forced (it would tokenize as multiple subwords).
    int forced_token_id(const std::string& form, LanguageTag lang) const {
        const VocabEntry* e = find(form);
        if (!e || !e->forced)
            throw DataError("not a forced single-token form: " + form);
        return e->id_for(lang);
    }

    json to_json() const {
        json j;
        j["condition"] = condition_name(condition_);
        j["byte_alphabet_in_budget"] = true;
        json merges = json::array();
        for (const auto& [l, r] : bpe_.merges())
            merges.push_back({bytes_to_printable(l), bytes_to_printable(r)});
        j["merges"] = std::move(merges);
        json ne_merges = json::array();
        for (const auto& [l, r] : ne_bpe_.merges())
            ne_merges.push_back({bytes_to_printable(l), bytes_to_printable(r)});
        j["ne_merges"] = std::move(ne_merges);
        j["vocab_size_target"] = bpe_.vocab_size_target;
        j["min_frequency"] = bpe_.min_frequency;
        j["ne_vocab_size_target"] = ne_bpe_.vocab_size_target;
        j["ne_min_frequency"] = ne_bpe_.min_frequency;
        json entries = json::array();
        for (const auto& e : entries_) {
            json je;
            je["token"] = bytes_to_printable(e.token);
            if (e.identity == TokenIdentity::Shared) {
                je["identity"] = "shared";
                je["ids"] = {{"shared", e.id}};
            } else {
                je["identity"] = "per_language";
                je["ids"] = {{"l1", e.id_l1}, {"l2", e.id_l2}};
            }
            json origin = json::array();
            if (e.from_bpe) origin.push_back("bpe");
            if (e.from_ne) origin.push_back("ne");
            if (e.forced) origin.push_back("forced");
            if (e.special) origin.push_back("special");
            je["origin"] = std::move(origin);
            entries.push_back(std::move(je));
        }
        j["entries"] = std::move(entries);
        j["forced"] = std::vector<std::string>(forced_forms_.begin(),
                                               forced_forms_.end());
        return j;
    }

    static ConditionVocabulary from_json(const json& j) {
        ConditionVocabulary v;
        v.condition_ = parse_condition(j.at("condition").get<std::string>());
        std::vector<std::pair<std::string, std::string>> merges;
        for (const auto& m : j.at("merges"))
            merges.emplace_back(printable_to_bytes(m[0].get<std::string>()),
                                printable_to_bytes(m[1].get<std::string>()));
        v.bpe_.set_merges(std::move(merges));
        v.bpe_.vocab_size_target = j.value("vocab_size_target", 0);
        v.bpe_.min_frequency = j.value("min_frequency", 1);
        std::vector<std::pair<std::string, std::string>> ne_merges;
        for (const auto& m : j.at("ne_merges"))
            ne_merges.emplace_back(printable_to_bytes(m[0].get<std::string>()),
                                   printable_to_bytes(m[1].get<std::string>()));
        v.ne_bpe_.set_merges(std::move(ne_merges));
        v.ne_bpe_.vocab_size_target = j.value("ne_vocab_size_target", 0);
        v.ne_bpe_.min_frequency = j.value("ne_min_frequency", 1);
        for (const auto& je : j.at("entries")) {
            VocabEntry e;
            e.token = printable_to_bytes(je.at("token").get<std::string>());
            const std::string ident = je.at("identity").get<std::string>();
            if (ident == "shared") {
                e.identity = TokenIdentity::Shared;
                e.id = je.at("ids").at("shared").get<int>();
            } else if (ident == "per_language") {
                e.identity = TokenIdentity::PerLanguage;
                e.id_l1 = je.at("ids").at("l1").get<int>();
                e.id_l2 = je.at("ids").at("l2").get<int>();
            } else {
                throw DataError("unknown identity: " + ident);
            }
            for (const auto& o : je.at("origin")) {
                const std::string s = o.get<std::string>();
                if (s == "bpe") e.from_bpe = true;
                else if (s == "ne") e.from_ne = true;
                else if (s == "forced") e.forced = true;
                else if (s == "special") e.special = true;
            }
            v.entries_.push_back(std::move(e));
        }
        for (const auto& f : j.at("forced"))
            v.forced_forms_.insert(f.get<std::string>());
        v.finish_indexes();
        return v;
    }

private:
    TokenIdentity decide_identity(const VocabEntry& e,
                                  const ConditionManifest& manifest) const {
        if (e.special) return TokenIdentity::Shared;
        if (e.forced) {
            return manifest.shared_forms.count(e.token)
                       ? TokenIdentity::Shared
                       : TokenIdentity::PerLanguage;
        }
        if (uni::is_punct_token(e.token)) return TokenIdentity::Shared;
        if (e.from_ne && !e.from_bpe) return TokenIdentity::Shared;
        return condition_ == Condition::A_full ? TokenIdentity::Shared
                                               : TokenIdentity::PerLanguage;
    }

    void finish_indexes() {
        size_ = 0;
        index_.clear();
        for (size_t i = 0; i < entries_.size(); ++i) {
            const auto& e = entries_[i];
            index_[e.token] = i;
            size_ += e.identity == TokenIdentity::Shared ? 1 : 2;
        }
        id_to_entry_.assign(static_cast<size_t>(size_), 0);
        for (size_t i = 0; i < entries_.size(); ++i) {
            const auto& e = entries_[i];
            if (e.identity == TokenIdentity::Shared) {
                check_id(e.id);
                id_to_entry_[static_cast<size_t>(e.id)] = i;
            } else {
                check_id(e.id_l1);
                check_id(e.id_l2);
                id_to_entry_[static_cast<size_t>(e.id_l1)] = i;
                id_to_entry_[static_cast<size_t>(e.id_l2)] = i;
            }
        }
        const VocabEntry* eot = find(kEndOfText);
        eot_id_ = eot ? eot->id : -1;
    }

    void check_id(int id) const {
        if (id < 0 || id >= size_)
            throw DataError("vocabulary id out of range: " + std::to_string(id));
    }

    void emit(const VocabEntry& e, LanguageTag lang, size_t begin, size_t end,
              TokenSequence& seq) const {
        seq.ids.push_back(e.id_for(lang));
        seq.offsets.push_back({begin, end});
    }

    void emit_symbols(const std::vector<std::string>& symbols, LanguageTag lang,
                      size_t base, TokenSequence& seq) const {
        size_t off = base;
        for (const auto& s : symbols) {
            const VocabEntry* e = find(s);
            if (!e) throw DataError("symbol missing from vocabulary");
            emit(*e, lang, off, off + s.size(), seq);
            off += s.size();
        }
    }

    void encode_ne_span(const Document& doc, const ByteSpan& span,
                        TokenSequence& seq) const {
        const std::string bytes =
            doc.text.substr(span.begin, span.end - span.begin);
        if (bytes.empty()) return;
        emit_symbols(ne_bpe_.segment(bytes), doc.lang, span.begin, seq);
    }

    void encode_gap(const Document& doc, size_t begin, size_t end,
                    TokenSequence& seq) const {
        const std::string_view gap =
            std::string_view(doc.text).substr(begin, end - begin);
        for (const auto& p : pretokenize(gap)) {
            const size_t base = begin + p.begin;
            if (p.is_word && forced_forms_.count(p.word)) {
                size_t word_off = base;
                if (p.bytes.size() > p.word.size()) {
                    // attached space goes out as its own byte token
                    const VocabEntry* sp = find(" ");
                    emit(*sp, doc.lang, base, base + 1, seq);
                    word_off = base + 1;
                }
                const VocabEntry* e = find(p.word);
                emit(*e, doc.lang, word_off, word_off + p.word.size(), seq);
            } else {
                emit_symbols(bpe_.segment(p.bytes), doc.lang, base, seq);
            }
        }
    }

    Condition condition_ = Condition::D_minimal;
    BpeModel bpe_;
    BpeModel ne_bpe_;
    std::set<std::string> forced_forms_;
    std::vector<VocabEntry> entries_;
    std::unordered_map<std::string, size_t> index_;
    std::vector<size_t> id_to_entry_;
    int size_ = 0;
    int eot_id_ = -1;
};

// Size and composition summary per identity class and origin.
inline json vocab_report(const ConditionVocabulary& vocab) {
    int shared_total = 0, per_lang_total = 0;
    int shared_punct = 0, shared_ne_only = 0, shared_forced = 0,
        shared_special = 0, shared_bpe_other = 0;
    int pl_forced = 0, pl_bpe = 0, pl_other = 0;
    for (const auto& e : vocab.entries()) {
        if (e.identity == TokenIdentity::Shared) {
            ++shared_total;
            if (e.special) ++shared_special;
            else if (e.forced) ++shared_forced;
            else if (uni::is_punct_token(e.token)) ++shared_punct;
            else if (e.from_ne && !e.from_bpe) ++shared_ne_only;
            else ++shared_bpe_other;
        } else {
            ++per_lang_total;
            if (e.forced) ++pl_forced;
            else if (e.from_bpe) ++pl_bpe;
            else ++pl_other;
        }
    }
    json j;
    j["condition"] = condition_name(vocab.condition());
    j["size"] = vocab.size();
    j["entries"] = static_cast<int>(vocab.entries().size());
    j["shared"] = {{"total", shared_total},
                   {"punctuation", shared_punct},
                   {"ne_only", shared_ne_only},
                   {"forced", shared_forced},
                   {"special", shared_special},
                   {"bpe_other", shared_bpe_other}};
    j["per_language"] = {{"total", per_lang_total},
                         {"forced", pl_forced},
                         {"bpe", pl_bpe},
                         {"other", pl_other}};
    return j;
}

}  // namespace bilex
