#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bilex/common.hpp"
#include "bilex/corpus.hpp"
#include "bilex/model.hpp"
#include "bilex/rng.hpp"
#include "bilex/vocabulary.hpp"

namespace bilex {

struct StimulusItem {
    std::string item_id;
    LanguageTag lang = LanguageTag::L2;
    std::string prefix;      // text before the target, same for both variants
    std::string target_exp;  // friend or false friend
    std::string target_ctl;  // language-unique control
    int word_index = 0;      // 1-based position of the target among words
    std::string continuation;  // optional, unused by surprisal
};

enum class WordCategory { Experimental, Control };

inline const char* word_category_name(WordCategory c) {
    return c == WordCategory::Experimental ? "experimental" : "control";
}

// Stimulus TSV: item_id, lang, prefix, target_exp, target_ctl, word_index
// with an optional seventh continuation column. '#' lines are comments.
inline std::vector<StimulusItem> parse_stimuli(const std::string& content,
                                               const LanguagePair& langs,
                                               const std::string& source) {
    std::vector<StimulusItem> out;
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
        if (cols.size() < 6)
            throw DataError(source + ":" + std::to_string(line_no) +
                            ": expected at least 6 tab-separated columns");
        StimulusItem item;
        item.item_id = cols[0];
        item.lang = langs.parse(cols[1]);
        item.prefix = cols[2];
        item.target_exp = cols[3];
        item.target_ctl = cols[4];
        item.word_index = std::stoi(cols[5]);
        if (cols.size() > 6) item.continuation = cols[6];
        if (item.word_index < 1)
            throw DataError(source + ":" + std::to_string(line_no) +
                            ": word_index must be >= 1");
        out.push_back(std::move(item));
    }
    return out;
}

inline std::string stimuli_to_tsv(const std::vector<StimulusItem>& items,
                                  const LanguagePair& langs,
                                  const std::string& header = {}) {
    std::string out = header;
    for (const auto& it : items) {
        out += it.item_id + "\t" + langs.name(it.lang) + "\t" + it.prefix +
               "\t" + it.target_exp + "\t" + it.target_ctl + "\t" +
               std::to_string(it.word_index);
        if (!it.continuation.empty()) out += "\t" + it.continuation;
        out += "\n";
    }
    return out;
}

struct SurprisalRecord {
    std::string item_id;
    Condition condition = Condition::A_full;
    WordCategory word_category = WordCategory::Experimental;
    std::string word;
    double surprisal_bits = 0.0;
    int word_index = 0;
    LanguageTag lang = LanguageTag::L2;
};

// -log2 p(target token | prefix), read from the next-token distribution at
// the last prefix position. The prefix is encoded behind an end-of-text
// token so that an empty prefix still has a conditioning position, matching
// how documents start in the packed training stream.
inline SurprisalRecord surprisal(const ModelCheckpoint& ckpt,
                                 const ConditionVocabulary& vocab,
                                 const StimulusItem& item, WordCategory which) {
    const std::string& target_raw = which == WordCategory::Experimental
                                        ? item.target_exp
                                        : item.target_ctl;
    const std::string target = uni::lowercase(target_raw);
    const VocabEntry* entry = vocab.find(target);
    if (!entry || !entry->forced)
        throw DataError("item " + item.item_id + ": target '" + target +
                        "' is not a forced single token");
    const int target_id = entry->id_for(item.lang);

    auto prefix_seq = vocab.encode_text(item.prefix, item.lang);
    std::vector<int> ids;
    ids.reserve(prefix_seq.ids.size() + 1);
    ids.push_back(vocab.eot_id());
    ids.insert(ids.end(), prefix_seq.ids.begin(), prefix_seq.ids.end());
    if (static_cast<int>(ids.size()) + 1 > ckpt.config.context_length)
        throw DataError("item " + item.item_id +
                        ": prefix exceeds context_length");

    Matrix lp = log_probs(ckpt, ids);
    const double logp = lp(lp.rows() - 1, target_id);
    SurprisalRecord rec;
    rec.item_id = item.item_id;
    rec.condition = vocab.condition();
    rec.word_category = which;
    rec.word = target;
    rec.surprisal_bits = -logp / M_LN2;
    rec.word_index = item.word_index;
    rec.lang = item.lang;
    return rec;
}

// Byte range of the first standalone occurrence of `word` in the text, or
// nullopt. Matching is exact on the lowercase form.
inline std::optional<ByteSpan> find_word_occurrence(const std::string& text,
                                                    const std::string& word) {
    for (const auto& tok : word_tokenize(text)) {
        if (tok.text == word) return ByteSpan{tok.begin, tok.end};
    }
    return std::nullopt;
}

struct SentenceSample {
    std::vector<size_t> doc_indices;  // into the store, ascending
    size_t n_available = 0;
};

// Uniform sample without replacement of sentences (documents) containing the
// word as a standalone word token; clamps to the number available.
inline SentenceSample sample_sentences(const DocumentStore& store,
                                       const std::string& word, size_t n,
                                       std::uint64_t seed) {
    std::vector<size_t> matching;
    for (size_t i = 0; i < store.docs.size(); ++i) {
        if (find_word_occurrence(store.docs[i].text, word)) matching.push_back(i);
    }
    SentenceSample out;
    out.n_available = matching.size();
    Rng rng(seed);
    auto pick = rng.sample_indices(matching.size(), n);
    out.doc_indices.reserve(pick.size());
    for (size_t k : pick) out.doc_indices.push_back(matching[k]);
    return out;
}

// Per-dimension standardization of hidden states, calibrated on a sample of
// token positions drawn across the store.
struct Standardizer {
    int layer = 0;
    Vector mean;
    Vector sd;  // strictly positive (epsilon-guarded)
    size_t n_instances = 0;
    std::vector<int> guarded_dims;

    Vector apply(const Vector& v) const {
        return ((v - mean).array() / sd.array()).matrix();
    }
};

inline Standardizer calibrate_standardizer(const ModelCheckpoint& ckpt,
                                           const ConditionVocabulary& vocab,
                                           const DocumentStore& store,
                                           int layer, size_t n_instances,
                                           std::uint64_t seed) {
    if (n_instances < 2)
        throw ConfigError("calibrate_standardizer: n_instances must be >= 2");
    const size_t ctx = static_cast<size_t>(ckpt.config.context_length);
    std::vector<std::pair<size_t, size_t>> positions;  // (doc, token index)
    std::vector<std::vector<int>> encoded(store.docs.size());
    for (size_t i = 0; i < store.docs.size(); ++i) {
        encoded[i] = vocab.encode(store.docs[i]).ids;
        if (encoded[i].size() > ctx) encoded[i].resize(ctx);
        for (size_t t = 0; t < encoded[i].size(); ++t)
            positions.emplace_back(i, t);
    }
    if (positions.size() < 2)
        throw DataError("calibrate_standardizer: fewer than 2 token positions");
    Rng rng(seed);
    auto pick = rng.sample_indices(positions.size(), n_instances);

    const int d = ckpt.config.d_model;
    Standardizer std_out;
    std_out.layer = layer;
    std_out.n_instances = pick.size();
    Matrix sample(static_cast<Eigen::Index>(pick.size()), d);
    size_t row = 0;
    size_t prev_doc = store.docs.size();
    Matrix h;
    for (size_t k : pick) {
        const auto [doc_i, tok_i] = positions[k];
        if (doc_i != prev_doc) {
            h = hidden_states(ckpt, encoded[doc_i], layer);
            prev_doc = doc_i;
        }
        sample.row(static_cast<Eigen::Index>(row++)) =
            h.row(static_cast<Eigen::Index>(tok_i));
    }
    std_out.mean = sample.colwise().mean();
    Vector ss(d);
    for (int c = 0; c < d; ++c)
        ss(c) = (sample.col(c).array() - std_out.mean(c)).square().sum();
    const double denom = static_cast<double>(pick.size() - 1);
    std_out.sd = (ss / denom).array().sqrt();
    for (int c = 0; c < d; ++c) {
        if (std_out.sd(c) < 1e-8) {
            std_out.sd(c) = 1e-8;
            std_out.guarded_dims.push_back(c);
        }
    }
    return std_out;
}

namespace detail {

// Token indices of the first standalone occurrence of `word`, plus the
// per-sentence pooled vectors. Offsets from encode() locate the word's
// token(s) exactly.
struct WordLocation {
    size_t first_token = 0;
    size_t last_token = 0;  // inclusive
};

inline std::optional<WordLocation> locate_word_tokens(
    const TokenSequence& seq, const ByteSpan& word_span) {
    std::optional<size_t> first;
    size_t last = 0;
    for (size_t i = 0; i < seq.offsets.size(); ++i) {
        const auto& o = seq.offsets[i];
        if (o.begin >= word_span.begin && o.end <= word_span.end &&
            o.end > o.begin) {
            if (!first) first = i;
            last = i;
        }
    }
    if (!first) return std::nullopt;
    return WordLocation{*first, last};
}

}  // namespace detail

struct PooledEmbedding {
    Vector mean;         // average over sentences of per-sentence pools
    size_t n_sentences = 0;  // sentences actually used
    size_t n_skipped = 0;    // e.g. sentence-initial targets for context
};

enum class PoolKind { Context, Word };

// Mean-pools standardized hidden states: for Context, positions strictly
// before the word's first token; for Word, exactly the word's token(s).
// Sentences where the pool would be empty are skipped and counted.
inline PooledEmbedding pooled_embedding(const ModelCheckpoint& ckpt,
                                        const ConditionVocabulary& vocab,
                                        const Standardizer& std_model,
                                        const DocumentStore& store,
                                        const std::vector<size_t>& doc_indices,
                                        const std::string& word, int layer,
                                        PoolKind kind) {
    const int d = ckpt.config.d_model;
    PooledEmbedding out;
    out.mean = Vector::Zero(d);
    // pairwise accumulation: collect per-sentence pools, then reduce
    std::vector<Vector> pools;
    for (size_t di : doc_indices) {
        const Document& doc = store.docs[di];
        auto span = find_word_occurrence(doc.text, word);
        if (!span) continue;
        auto seq = vocab.encode(doc);
        if (seq.ids.size() > static_cast<size_t>(ckpt.config.context_length))
            continue;
        auto loc = detail::locate_word_tokens(seq, *span);
        if (!loc) continue;
        size_t pool_begin, pool_end;  // half-open token range
        if (kind == PoolKind::Context) {
            pool_begin = 0;
            pool_end = loc->first_token;
            if (pool_end == 0) {
                ++out.n_skipped;  // sentence-initial target: no context
                continue;
            }
        } else {
            pool_begin = loc->first_token;
            pool_end = loc->last_token + 1;
        }
        Matrix h = hidden_states(ckpt, seq.ids, layer);
        Vector pool = Vector::Zero(d);
        for (size_t t = pool_begin; t < pool_end; ++t)
            pool +=
                std_model.apply(h.row(static_cast<Eigen::Index>(t)).transpose());
        pool /= static_cast<double>(pool_end - pool_begin);
        pools.push_back(std::move(pool));
    }
    out.n_sentences = pools.size();
    if (pools.empty()) return out;
    // pairwise summation over sentences
    while (pools.size() > 1) {
        std::vector<Vector> next;
        next.reserve((pools.size() + 1) / 2);
        for (size_t i = 0; i + 1 < pools.size(); i += 2)
            next.push_back(pools[i] + pools[i + 1]);
        if (pools.size() % 2) next.push_back(pools.back());
        pools = std::move(next);
    }
    out.mean = pools[0] / static_cast<double>(out.n_sentences);
    return out;
}

inline double cosine_similarity(const Vector& a, const Vector& b) {
    if (a.size() != b.size())
        throw DataError("cosine: dimension mismatch");
    const double na = a.norm(), nb = b.norm();
    if (na == 0.0 || nb == 0.0) throw NumericError("cosine: zero-norm vector");
    return a.dot(b) / (na * nb);
}

struct SimilarityRecord {
    std::string word;
    Condition condition = Condition::A_full;
    PoolKind kind = PoolKind::Word;
    int layer = 0;
    double cosine = 0.0;
    size_t n_l1 = 0;
    size_t n_l2 = 0;
};

}  // namespace bilex
