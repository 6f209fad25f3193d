#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "bilex/common.hpp"
#include "bilex/corpus.hpp"
#include "bilex/unicode.hpp"

namespace bilex {

enum class WordKlass {
    Friend,        // cognate or loan word: same form, same meaning
    FalseFriend,   // interlingual homograph: same form, different meaning
    Ambiguous,     // annotated as both; excluded from the manipulation
    Control,       // language-unique stimulus control word
    NamedEntity,
    Punctuation,
    Other,
};

inline const char* klass_name(WordKlass k) {
    switch (k) {
        case WordKlass::Friend: return "friend";
        case WordKlass::FalseFriend: return "falsefriend";
        case WordKlass::Ambiguous: return "ambiguous";
        case WordKlass::Control: return "control";
        case WordKlass::NamedEntity: return "namedentity";
        case WordKlass::Punctuation: return "punctuation";
        case WordKlass::Other: return "other";
    }
    return "other";
}

struct LexiconEntry {
    std::string form;  // lowercase surface form
    WordKlass klass = WordKlass::Other;
    std::string source;  // annotation provenance, empty for derived classes
};

enum class Condition { A_full, B_friends, C_falsefriends, D_minimal };

inline const char* condition_name(Condition c) {
    switch (c) {
        case Condition::A_full: return "A";
        case Condition::B_friends: return "B";
        case Condition::C_falsefriends: return "C";
        case Condition::D_minimal: return "D";
    }
    return "?";
}

inline Condition parse_condition(const std::string& s) {
    if (s == "A" || s == "A_full") return Condition::A_full;
    if (s == "B" || s == "B_friends") return Condition::B_friends;
    if (s == "C" || s == "C_falsefriends") return Condition::C_falsefriends;
    if (s == "D" || s == "D_minimal") return Condition::D_minimal;
    throw ConfigError("unknown condition: " + s);
}

inline const std::vector<Condition>& all_conditions() {
    static const std::vector<Condition> conds = {
        Condition::A_full, Condition::B_friends, Condition::C_falsefriends,
        Condition::D_minimal};
    return conds;
}

// For one condition: the forms whose token identity is shared between the
// two languages, and the forms forced to tokenize as a single subword.
struct ConditionManifest {
    Condition condition = Condition::D_minimal;
    std::set<std::string> shared_forms;
    std::set<std::string> forced_single;  // friends + false friends + controls
    std::vector<std::string> warnings;
};

// Forms attested in both languages (count >= 1 on each side).
inline std::set<std::string> find_overlap(const FrequencyTable& freq_l1,
                                          const FrequencyTable& freq_l2) {
    if (freq_l1.lang == freq_l2.lang)
        throw DataError("find_overlap: same-language inputs");
    std::set<std::string> out;
    const auto& small =
        freq_l1.counts.size() <= freq_l2.counts.size() ? freq_l1 : freq_l2;
    const auto& large =
        freq_l1.counts.size() <= freq_l2.counts.size() ? freq_l2 : freq_l1;
    for (const auto& [form, c] : small.counts) {
        if (c >= 1 && large.count(form) >= 1) out.insert(form);
    }
    return out;
}

// One annotation file: form<TAB>klass rows, klass in {friend, falsefriend,
// control}. Lines starting with '#' are comments.
struct AnnotationFile {
    std::string source;  // provenance label (usually the filename)
    std::map<std::string, WordKlass> rows;
};

inline AnnotationFile parse_annotations(const std::string& content,
                                        const std::string& source) {
    AnnotationFile file;
    file.source = source;
    size_t pos = 0;
    size_t line_no = 0;
    while (pos < content.size()) {
        size_t eol = content.find('\n', pos);
        if (eol == std::string::npos) eol = content.size();
        std::string line = content.substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto cols = split(line, '\t');
        if (cols.size() < 2)
            throw DataError(source + ":" + std::to_string(line_no) +
                            ": expected form<TAB>klass");
        const std::string& form = cols[0];
        if (form != uni::lowercase(form))
            throw DataError(source + ":" + std::to_string(line_no) +
                            ": annotated form must be lowercase: " + form);
        WordKlass klass;
        if (cols[1] == "friend") klass = WordKlass::Friend;
        else if (cols[1] == "falsefriend") klass = WordKlass::FalseFriend;
        else if (cols[1] == "control") klass = WordKlass::Control;
        else
            throw DataError(source + ":" + std::to_string(line_no) +
                            ": unknown klass '" + cols[1] + "'");
        auto [it, inserted] = file.rows.emplace(form, klass);
        if (!inserted && it->second != klass)
            throw DataError(source + ":" + std::to_string(line_no) +
                            ": conflicting duplicate row for '" + form + "'");
        (void)it;
    }
    return file;
}

// Assigns each overlapping form exactly one klass. Punctuation-only forms
// classify as Punctuation; a form annotated both friend and falsefriend
// (possibly across files) becomes Ambiguous; unannotated forms are Other.
// Order of annotation files does not matter.
inline std::vector<LexiconEntry> classify(
    const std::set<std::string>& overlap,
    const std::vector<AnnotationFile>& annotations) {
    std::map<std::string, std::pair<std::set<WordKlass>, std::string>> seen;
    for (const auto& file : annotations) {
        for (const auto& [form, klass] : file.rows) {
            auto& slot = seen[form];
            slot.first.insert(klass);
            if (!slot.second.empty()) slot.second += "+";
            slot.second += file.source;
        }
    }
    std::vector<LexiconEntry> out;
    out.reserve(overlap.size());
    for (const auto& form : overlap) {
        LexiconEntry entry;
        entry.form = form;
        if (uni::is_punct_token(form)) {
            entry.klass = WordKlass::Punctuation;
        } else if (auto it = seen.find(form); it != seen.end()) {
            const auto& klasses = it->second.first;
            const bool fr = klasses.count(WordKlass::Friend) > 0;
            const bool ff = klasses.count(WordKlass::FalseFriend) > 0;
            if (fr && ff) entry.klass = WordKlass::Ambiguous;
            else if (fr) entry.klass = WordKlass::Friend;
            else if (ff) entry.klass = WordKlass::FalseFriend;
            else entry.klass = WordKlass::Control;
            entry.source = it->second.second;
        } else {
            entry.klass = WordKlass::Other;
        }
        out.push_back(std::move(entry));
    }
    return out;
}

// Shared-form assembly:
//   D = punctuation + named-entity marker forms
//   B = D + friends            C = D + false friends
//   A = D + every overlapping form (ambiguous and unannotated included)
// forced_single is condition-independent: friends + false friends + declared
// controls. Controls never enter any shared set.
inline ConditionManifest build_manifest(
    Condition condition, const std::vector<LexiconEntry>& entries,
    const std::set<std::string>& overlap, const std::set<std::string>& punct,
    const std::set<std::string>& ne_marker_forms,
    const std::set<std::string>& control_forms = {},
    const FrequencyTable* freq_l1 = nullptr,
    const FrequencyTable* freq_l2 = nullptr) {
    ConditionManifest m;
    m.condition = condition;
    m.shared_forms = punct;
    m.shared_forms.insert(ne_marker_forms.begin(), ne_marker_forms.end());
    std::set<std::string> friends, falsefriends;
    for (const auto& e : entries) {
        if (e.klass == WordKlass::Friend) friends.insert(e.form);
        else if (e.klass == WordKlass::FalseFriend) falsefriends.insert(e.form);
        else if (e.klass == WordKlass::Control) m.forced_single.insert(e.form);
        else if (e.klass == WordKlass::Punctuation) m.shared_forms.insert(e.form);
    }
    switch (condition) {
        case Condition::A_full:
            for (const auto& form : overlap) m.shared_forms.insert(form);
            break;
        case Condition::B_friends:
            m.shared_forms.insert(friends.begin(), friends.end());
            break;
        case Condition::C_falsefriends:
            m.shared_forms.insert(falsefriends.begin(), falsefriends.end());
            break;
        case Condition::D_minimal:
            break;
    }
    m.forced_single.insert(friends.begin(), friends.end());
    m.forced_single.insert(falsefriends.begin(), falsefriends.end());
    m.forced_single.insert(control_forms.begin(), control_forms.end());
    if (freq_l1 && freq_l2) {
        for (const auto& form : m.forced_single) {
            if (freq_l1->count(form) == 0 && freq_l2->count(form) == 0)
                m.warnings.push_back("forced form absent from both corpora: " +
                                     form);
        }
    }
    return m;
}

inline json manifest_to_json(const ConditionManifest& m) {
    json j;
    j["condition"] = condition_name(m.condition);
    j["shared_forms"] = std::vector<std::string>(m.shared_forms.begin(),
                                                 m.shared_forms.end());
    j["forced_single"] = std::vector<std::string>(m.forced_single.begin(),
                                                  m.forced_single.end());
    if (!m.warnings.empty()) j["warnings"] = m.warnings;
    return j;
}

inline ConditionManifest manifest_from_json(const json& j) {
    ConditionManifest m;
    m.condition = parse_condition(j.at("condition").get<std::string>());
    for (const auto& f : j.at("shared_forms"))
        m.shared_forms.insert(f.get<std::string>());
    for (const auto& f : j.at("forced_single"))
        m.forced_single.insert(f.get<std::string>());
    if (j.contains("warnings"))
        for (const auto& w : j["warnings"])
            m.warnings.push_back(w.get<std::string>());
    return m;
}

}  // namespace bilex
