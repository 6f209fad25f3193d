#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "bilex/common.hpp"
#include "bilex/corpus.hpp"
#include "bilex/unicode.hpp"

namespace bilex {

// A unit fed to byte-level BPE: the bytes of one word, punctuation mark or
// whitespace run, with a single preceding space attached to word-initial
// units (GPT-2 style).
struct Pretoken {
    std::string bytes;
    size_t begin = 0;  // offset of `bytes` start in the source segment
    bool is_word = false;
    std::string word;  // bare word (no space prefix) when is_word
};

// Splits a text segment into pretokens. Word and punctuation units absorb
// one immediately preceding ASCII space; any remaining whitespace forms its
// own unit. Concatenating pretoken bytes reproduces the segment exactly.
inline std::vector<Pretoken> pretokenize(std::string_view seg) {
    std::vector<Pretoken> out;
    size_t pos = 0;
    bool pending_space = false;

    enum class Cls { Space, Punct, Word };
    auto classify = [](std::uint32_t cp) {
        if (uni::is_space(cp)) return Cls::Space;
        if (uni::is_punct(cp)) return Cls::Punct;
        return Cls::Word;
    };

    while (pos < seg.size()) {
        size_t len = 0;
        const std::uint32_t cp = uni::decode_utf8(seg, pos, &len);
        const Cls cls = classify(cp);
        if (cls == Cls::Space) {
            // maximal whitespace run
            size_t end = pos + len;
            while (end < seg.size()) {
                size_t l2 = 0;
                if (!uni::is_space(uni::decode_utf8(seg, end, &l2))) break;
                end += l2;
            }
            if (end < seg.size() && seg[end - 1] == ' ') {
                // last space attaches to the following unit
                if (end - 1 > pos)
                    out.push_back({std::string(seg.substr(pos, end - 1 - pos)),
                                   pos, false, {}});
                pending_space = true;
            } else {
                out.push_back({std::string(seg.substr(pos, end - pos)), pos,
                               false, {}});
                pending_space = false;
            }
            pos = end;
        } else if (cls == Cls::Punct) {
            Pretoken p;
            p.begin = pending_space ? pos - 1 : pos;
            p.bytes = pending_space ? " " + std::string(seg.substr(pos, len))
                                    : std::string(seg.substr(pos, len));
            p.is_word = true;
            p.word = std::string(seg.substr(pos, len));
            out.push_back(std::move(p));
            pending_space = false;
            pos += len;
        } else {
            size_t end = pos + len;
            while (end < seg.size()) {
                size_t l2 = 0;
                if (classify(uni::decode_utf8(seg, end, &l2)) != Cls::Word)
                    break;
                end += l2;
            }
            Pretoken p;
            p.begin = pending_space ? pos - 1 : pos;
            p.bytes = pending_space
                          ? " " + std::string(seg.substr(pos, end - pos))
                          : std::string(seg.substr(pos, end - pos));
            p.is_word = true;
            p.word = std::string(seg.substr(pos, end - pos));
            out.push_back(std::move(p));
            pending_space = false;
            pos = end;
        }
    }
    return out;
}

// Byte-level BPE model: the 256 byte alphabet plus an ordered merge list.
// The vocabulary budget counts the byte alphabet, so at most
// vocab_size_target - 256 distinct merged symbols are created.
class BpeModel {
public:
    BpeModel() = default;

    int vocab_size_target = 0;
    int min_frequency = 1;

    const std::vector<std::pair<std::string, std::string>>& merges() const {
        return merges_;
    }

    void set_merges(std::vector<std::pair<std::string, std::string>> merges) {
        merges_ = std::move(merges);
        ranks_.clear();
        for (size_t i = 0; i < merges_.size(); ++i) {
            ranks_.emplace(merges_[i].first + "\x1f" + merges_[i].second, i);
        }
    }

    // All distinct symbol strings: 256 single bytes plus merge results.
    std::vector<std::string> symbol_strings() const {
        std::set<std::string> seen;
        std::vector<std::string> out;
        out.reserve(256 + merges_.size());
        for (int b = 0; b < 256; ++b) {
            std::string s(1, static_cast<char>(b));
            seen.insert(s);
            out.push_back(std::move(s));
        }
        for (const auto& [l, r] : merges_) {
            std::string s = l + r;
            if (seen.insert(s).second) out.push_back(std::move(s));
        }
        return out;
    }

    // Segments one pretoken's bytes by applying merges in training order.
    std::vector<std::string> segment(std::string_view bytes) const {
        std::vector<std::string> parts;
        parts.reserve(bytes.size());
        for (char c : bytes) parts.emplace_back(1, c);
        while (parts.size() >= 2) {
            size_t best_rank = ranks_.size();
            for (size_t i = 0; i + 1 < parts.size(); ++i) {
                auto it = ranks_.find(parts[i] + "\x1f" + parts[i + 1]);
                if (it != ranks_.end() && it->second < best_rank)
                    best_rank = it->second;
            }
            if (best_rank == ranks_.size()) break;
            const auto& [left, right] = merges_[best_rank];
            std::vector<std::string> next;
            next.reserve(parts.size());
            for (size_t i = 0; i < parts.size();) {
                if (i + 1 < parts.size() && parts[i] == left &&
                    parts[i + 1] == right) {
                    next.push_back(left + right);
                    i += 2;
                } else {
                    next.push_back(parts[i]);
                    ++i;
                }
            }
            parts = std::move(next);
        }
        return parts;
    }

private:
    std::vector<std::pair<std::string, std::string>> merges_;
    std::unordered_map<std::string, size_t> ranks_;
};

namespace detail {

// Training works over pretoken types with multiplicities. Pair counts are
// kept exactly; the most frequent pair wins, ties broken by the
// lexicographically smallest (left bytes, right bytes).
class BpeTrainer {
public:
    void add(const std::string& bytes, std::int64_t count) {
        auto [it, inserted] = index_.emplace(bytes, words_.size());
        if (inserted) {
            words_.push_back({bytes, count, {}});
        } else {
            words_[it->second].count += count;
        }
    }

    BpeModel train(int vocab_size, int min_freq) {
        if (vocab_size <= 256)
            throw ConfigError("vocab_size must exceed byte alphabet (256)");
        if (min_freq < 1) throw ConfigError("min_frequency must be >= 1");

        for (auto& w : words_) {
            w.parts.reserve(w.bytes.size());
            for (char c : w.bytes) w.parts.emplace_back(1, c);
        }
        std::map<std::pair<std::string, std::string>, std::int64_t> pair_counts;
        std::map<std::pair<std::string, std::string>, std::set<size_t>> where;
        for (size_t wi = 0; wi < words_.size(); ++wi) {
            const auto& w = words_[wi];
            for (size_t i = 0; i + 1 < w.parts.size(); ++i) {
                auto key = std::make_pair(w.parts[i], w.parts[i + 1]);
                pair_counts[key] += w.count;
                where[key].insert(wi);
            }
        }

        std::vector<std::pair<std::string, std::string>> merges;
        std::set<std::string> symbols;
        for (int b = 0; b < 256; ++b) symbols.insert(std::string(1, char(b)));

        while (static_cast<int>(symbols.size()) < vocab_size) {
            const std::pair<std::string, std::string>* best = nullptr;
            std::int64_t best_count = 0;
            for (const auto& [pair, count] : pair_counts) {
                if (count > best_count) {
                    best_count = count;
                    best = &pair;
                }
                // map iteration is ascending, so the first maximum seen is
                // already the lexicographically smallest pair
            }
            if (!best || best_count < min_freq) break;
            const auto chosen = *best;
            merges.push_back(chosen);
            symbols.insert(chosen.first + chosen.second);

            auto affected_it = where.find(chosen);
            std::vector<size_t> affected(affected_it->second.begin(),
                                         affected_it->second.end());
            for (size_t wi : affected) {
                auto& w = words_[wi];
                remove_pairs(wi, w, pair_counts, where);
                apply_merge(w.parts, chosen);
                add_pairs(wi, w, pair_counts, where);
            }
            pair_counts.erase(chosen);
            where.erase(chosen);
        }

        BpeModel model;
        model.vocab_size_target = vocab_size;
        model.min_frequency = min_freq;
        model.set_merges(std::move(merges));
        return model;
    }

private:
    struct Word {
        std::string bytes;
        std::int64_t count = 0;
        std::vector<std::string> parts;
    };

    static void apply_merge(std::vector<std::string>& parts,
                            const std::pair<std::string, std::string>& m) {
        std::vector<std::string> next;
        next.reserve(parts.size());
        for (size_t i = 0; i < parts.size();) {
            if (i + 1 < parts.size() && parts[i] == m.first &&
                parts[i + 1] == m.second) {
                next.push_back(m.first + m.second);
                i += 2;
            } else {
                next.push_back(parts[i]);
                ++i;
            }
        }
        parts = std::move(next);
    }

    void remove_pairs(
        size_t wi, const Word& w,
        std::map<std::pair<std::string, std::string>, std::int64_t>& counts,
        std::map<std::pair<std::string, std::string>, std::set<size_t>>& where) {
        for (size_t i = 0; i + 1 < w.parts.size(); ++i) {
            auto key = std::make_pair(w.parts[i], w.parts[i + 1]);
            auto it = counts.find(key);
            if (it == counts.end()) continue;
            it->second -= w.count;
            if (it->second <= 0) {
                counts.erase(it);
                where.erase(key);
            } else {
                auto wit = where.find(key);
                if (wit != where.end()) wit->second.erase(wi);
            }
        }
    }

    void add_pairs(
        size_t wi, const Word& w,
        std::map<std::pair<std::string, std::string>, std::int64_t>& counts,
        std::map<std::pair<std::string, std::string>, std::set<size_t>>& where) {
        for (size_t i = 0; i + 1 < w.parts.size(); ++i) {
            auto key = std::make_pair(w.parts[i], w.parts[i + 1]);
            counts[key] += w.count;
            where[key].insert(wi);
        }
    }

    std::unordered_map<std::string, size_t> index_;
    std::vector<Word> words_;
};

// Non-NE text segments of a document, in order.
inline std::vector<std::pair<size_t, size_t>> gap_segments(const Document& d) {
    std::vector<std::pair<size_t, size_t>> gaps;
    size_t pos = 0;
    for (const auto& span : d.ne_spans) {
        if (span.begin > pos) gaps.emplace_back(pos, span.begin);
        pos = span.end;
    }
    if (pos < d.text.size()) gaps.emplace_back(pos, d.text.size());
    return gaps;
}

}  // namespace detail

// Trains the main tokenizer over the non-NE text of both stores. Words in
// `exclude` (lowercase forms, matched case-insensitively) contribute no pair
// statistics: they will be whole tokens by fiat.
inline BpeModel train_bpe(const std::vector<const DocumentStore*>& stores,
                          int vocab_size, int min_freq,
                          const std::set<std::string>& exclude = {}) {
    detail::BpeTrainer trainer;
    for (const auto* store : stores) {
        for (const auto& doc : store->docs) {
            for (const auto& [begin, end] : detail::gap_segments(doc)) {
                auto pres = pretokenize(
                    std::string_view(doc.text).substr(begin, end - begin));
                for (const auto& p : pres) {
                    if (p.is_word && exclude.count(uni::lowercase(p.word)))
                        continue;
                    trainer.add(p.bytes, 1);
                }
            }
        }
    }
    return trainer.train(vocab_size, min_freq);
}

// Trains the named-entity tokenizer over extracted span texts; each span
// text is a single unit, bytes taken verbatim.
inline BpeModel train_ne_bpe(const std::vector<std::string>& ne_texts,
                             int vocab_size, int min_freq) {
    detail::BpeTrainer trainer;
    for (const auto& t : ne_texts) trainer.add(t, 1);
    return trainer.train(vocab_size, min_freq);
}

inline std::vector<std::string> extract_ne_texts(
    const std::vector<const DocumentStore*>& stores) {
    std::vector<std::string> out;
    for (const auto* store : stores)
        for (const auto& doc : store->docs)
            for (const auto& span : doc.ne_spans)
                out.push_back(doc.text.substr(span.begin, span.end - span.begin));
    return out;
}

// GPT-2 style byte <-> printable-codepoint bijection, used to store raw byte
// strings inside JSON.
inline const std::array<std::uint32_t, 256>& byte_to_unicode_table() {
    static const std::array<std::uint32_t, 256> table = [] {
        std::array<std::uint32_t, 256> t{};
        std::uint32_t extra = 0;
        for (int b = 0; b < 256; ++b) {
            const bool printable = (b >= 0x21 && b <= 0x7E) ||
                                   (b >= 0xA1 && b <= 0xAC) ||
                                   (b >= 0xAE && b <= 0xFF);
            t[static_cast<size_t>(b)] =
                printable ? static_cast<std::uint32_t>(b) : 0x100 + extra++;
        }
        return t;
    }();
    return table;
}

inline std::string bytes_to_printable(std::string_view bytes) {
    const auto& table = byte_to_unicode_table();
    std::string out;
    out.reserve(bytes.size() * 2);
    for (unsigned char b : bytes) uni::encode_utf8(table[b], &out);
    return out;
}

inline std::string printable_to_bytes(std::string_view printable) {
    static const std::map<std::uint32_t, unsigned char> reverse = [] {
        std::map<std::uint32_t, unsigned char> m;
        const auto& table = byte_to_unicode_table();
        for (int b = 0; b < 256; ++b)
            m[table[static_cast<size_t>(b)]] = static_cast<unsigned char>(b);
        return m;
    }();
    std::string out;
    out.reserve(printable.size());
    size_t pos = 0;
    while (pos < printable.size()) {
        size_t len = 0;
        const std::uint32_t cp = uni::decode_utf8(printable, pos, &len);
        auto it = reverse.find(cp);
        if (it == reverse.end())
            throw DataError("invalid byte encoding in tokenizer file");
        out.push_back(static_cast<char>(it->second));
        pos += len;
    }
    return out;
}

}  // namespace bilex
