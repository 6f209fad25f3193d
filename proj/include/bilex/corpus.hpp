#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <set>
#include <vector>

#include <nlohmann/json.hpp>

#include "bilex/common.hpp"
#include "bilex/unicode.hpp"

namespace bilex {

// nlohmann::json keeps keys sorted, which the file formats rely on for
// byte-stable output.
using json = nlohmann::json;

// Exactly two languages per experiment. Display names ("nl"/"en" by
// default) are configuration; L1/L2 is the stable identity.
enum class LanguageTag { L1, L2 };

struct LanguagePair {
    std::string l1_name = "nl";
    std::string l2_name = "en";

    const std::string& name(LanguageTag t) const {
        return t == LanguageTag::L1 ? l1_name : l2_name;
    }
    LanguageTag parse(const std::string& s) const {
        if (s == l1_name) return LanguageTag::L1;
        if (s == l2_name) return LanguageTag::L2;
        throw DataError("unknown language tag: " + s);
    }
};

inline LanguageTag other_language(LanguageTag t) {
    return t == LanguageTag::L1 ? LanguageTag::L2 : LanguageTag::L1;
}

// Half-open byte span, used for named entities.
struct ByteSpan {
    size_t begin = 0;
    size_t end = 0;
};

struct Document {
    std::string id;
    std::string text;
    LanguageTag lang = LanguageTag::L1;
    std::vector<ByteSpan> ne_spans;  // sorted, non-overlapping, in bounds
};

struct DocumentStore {
    std::vector<Document> docs;

    size_t size() const { return docs.size(); }
    bool empty() const { return docs.empty(); }
};

namespace detail {

inline bool is_utf8_char_boundary(const std::string& text, size_t pos) {
    if (pos >= text.size()) return pos == text.size();
    return (static_cast<unsigned char>(text[pos]) & 0xC0) != 0x80;
}

inline void validate_spans(Document& doc, size_t record_no) {
    auto& spans = doc.ne_spans;
    std::sort(spans.begin(), spans.end(),
              [](const ByteSpan& a, const ByteSpan& b) {
                  return a.begin < b.begin;
              });
    size_t prev_end = 0;
    bool first = true;
    for (const auto& s : spans) {
        const std::string where =
            " in record " + std::to_string(record_no) + " (id=" + doc.id + ")";
        if (s.end < s.begin)
            throw DataError("span end before start" + where);
        if (s.end > doc.text.size())
            throw DataError("span out of bounds" + where);
        if (!first && s.begin < prev_end)
            throw DataError("overlapping ne spans" + where);
        if (!is_utf8_char_boundary(doc.text, s.begin) ||
            !is_utf8_char_boundary(doc.text, s.end))
            throw DataError("span not on character boundary" + where);
        prev_end = s.end;
        first = false;
    }
}

}  // namespace detail

// Reads a JSON Lines corpus: {"id", "text", "lang", "ne_spans"} per line.
// Blank lines are skipped; anything else must parse, with the line number
// reported on failure. Every document must carry the expected language.
inline DocumentStore ingest(const std::string& path, LanguageTag lang,
                            const LanguagePair& langs = {}) {
    const std::string content = read_file(path);
    DocumentStore store;
    size_t line_no = 0;
    size_t pos = 0;
    while (pos < content.size()) {
        size_t eol = content.find('\n', pos);
        if (eol == std::string::npos) eol = content.size();
        std::string line = content.substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError("malformed record at line " +
                            std::to_string(line_no) + " of " + path + ": " +
                            e.what());
        }
        if (!rec.is_object() || !rec.contains("id") || !rec.contains("text") ||
            !rec.contains("lang"))
            throw DataError("malformed record at line " +
                            std::to_string(line_no) + " of " + path +
                            ": need id/text/lang");
        Document doc;
        doc.id = rec["id"].get<std::string>();
        doc.text = rec["text"].get<std::string>();
        doc.lang = langs.parse(rec["lang"].get<std::string>());
        if (doc.lang != lang)
            throw DataError("record at line " + std::to_string(line_no) +
                            " has language '" + langs.name(doc.lang) +
                            "', expected '" + langs.name(lang) + "'");
        if (rec.contains("ne_spans")) {
            for (const auto& sp : rec["ne_spans"]) {
                if (!sp.is_array() || sp.size() != 2)
                    throw DataError("malformed span at line " +
                                    std::to_string(line_no));
                auto a = sp[0].get<std::int64_t>();
                auto b = sp[1].get<std::int64_t>();
                if (a < 0 || b < 0)
                    throw DataError("negative span at line " +
                                    std::to_string(line_no));
                if (b < a)
                    throw DataError("span end before start at line " +
                                    std::to_string(line_no) + " of " + path);
                doc.ne_spans.push_back(
                    {static_cast<size_t>(a), static_cast<size_t>(b)});
            }
        }
        detail::validate_spans(doc, line_no);
        store.docs.push_back(std::move(doc));
    }
    return store;
}

struct WordToken {
    std::string text;
    size_t begin = 0;  // byte offsets into the original string
    size_t end = 0;
    bool is_punct = false;
};

// Splits on Unicode whitespace and isolates each punctuation (category P*)
// character as its own token. Case is preserved; offsets reference the
// input string.
inline std::vector<WordToken> word_tokenize(std::string_view text) {
    std::vector<WordToken> out;
    size_t pos = 0;
    size_t word_start = std::string::npos;
    auto flush_word = [&](size_t end) {
        if (word_start != std::string::npos) {
            out.push_back({std::string(text.substr(word_start, end - word_start)),
                           word_start, end, false});
            word_start = std::string::npos;
        }
    };
    while (pos < text.size()) {
        size_t len = 0;
        const std::uint32_t cp = uni::decode_utf8(text, pos, &len);
        if (uni::is_space(cp)) {
            flush_word(pos);
        } else if (uni::is_punct(cp)) {
            flush_word(pos);
            out.push_back({std::string(text.substr(pos, len)), pos, pos + len, true});
        } else {
            if (word_start == std::string::npos) word_start = pos;
        }
        pos += len;
    }
    flush_word(text.size());
    return out;
}

struct FrequencyTable {
    LanguageTag lang = LanguageTag::L1;
    std::map<std::string, std::int64_t> counts;  // lowercased surface forms
    std::int64_t total_tokens = 0;

    std::int64_t count(const std::string& form) const {
        auto it = counts.find(form);
        return it == counts.end() ? 0 : it->second;
    }
};

// Counts word tokens outside named-entity spans, case-folding keys.
// Punctuation tokens count like any other token.
inline FrequencyTable count_frequencies(const DocumentStore& store) {
    FrequencyTable table;
    bool lang_set = false;
    for (const auto& doc : store.docs) {
        if (!lang_set) {
            table.lang = doc.lang;
            lang_set = true;
        } else if (doc.lang != table.lang) {
            throw DataError("count_frequencies: mixed-language store");
        }
        auto tokens = word_tokenize(doc.text);
        size_t span_idx = 0;
        for (const auto& tok : tokens) {
            // skip tokens that intersect any NE span
            while (span_idx < doc.ne_spans.size() &&
                   doc.ne_spans[span_idx].end <= tok.begin)
                ++span_idx;
            if (span_idx < doc.ne_spans.size() &&
                doc.ne_spans[span_idx].begin < tok.end)
                continue;
            table.counts[uni::lowercase(tok.text)] += 1;
            table.total_tokens += 1;
        }
    }
    return table;
}

struct NormalizedFrequency {
    LanguageTag lang = LanguageTag::L1;
    std::map<std::string, double> values;  // z-scores of log1p(count)
    double mean_log = 0.0;
    double sd_log = 0.0;
};

// z-scores of log1p(count) over the given support; forms missing from the
// table contribute count 0. Sample standard deviation (n-1).
inline NormalizedFrequency log_normalize(const FrequencyTable& table,
                                         const std::set<std::string>& support) {
    if (support.empty()) throw DataError("log_normalize: empty support");
    NormalizedFrequency out;
    out.lang = table.lang;
    std::vector<double> logs;
    logs.reserve(support.size());
    for (const auto& form : support)
        logs.push_back(std::log1p(static_cast<double>(table.count(form))));
    double mean = 0.0;
    for (double v : logs) mean += v;
    mean /= static_cast<double>(logs.size());
    double ss = 0.0;
    for (double v : logs) ss += (v - mean) * (v - mean);
    const double denom = logs.size() > 1 ? static_cast<double>(logs.size() - 1)
                                         : 1.0;
    const double sd = std::sqrt(ss / denom);
    if (sd <= 0.0)
        throw NumericError(
            "log_normalize: zero variance over support (all counts identical)");
    out.mean_log = mean;
    out.sd_log = sd;
    size_t i = 0;
    for (const auto& form : support) out.values[form] = (logs[i++] - mean) / sd;
    return out;
}

// TSV export: form<TAB>count, descending by count then lexicographic.
// `header` is prepended verbatim when non-empty (used for metadata lines).
inline std::string frequency_table_tsv(const FrequencyTable& table,
                                       const std::string& header = {}) {
    std::vector<std::pair<std::string, std::int64_t>> rows(
        table.counts.begin(), table.counts.end());
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::string out = header;
    for (const auto& [form, count] : rows) {
        out += form;
        out.push_back('\t');
        out += std::to_string(count);
        out.push_back('\n');
    }
    return out;
}

inline FrequencyTable frequency_table_from_tsv(const std::string& content,
                                               LanguageTag lang) {
    FrequencyTable table;
    table.lang = lang;
    size_t pos = 0;
    size_t line_no = 0;
    while (pos < content.size()) {
        size_t eol = content.find('\n', pos);
        if (eol == std::string::npos) eol = content.size();
        std::string line = content.substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw DataError("bad frequency row at line " +
                            std::to_string(line_no));
        const std::int64_t c = std::stoll(line.substr(tab + 1));
        table.counts[line.substr(0, tab)] += c;
        table.total_tokens += c;
    }
    return table;
}

}  // namespace bilex
