#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "bilex/corpus.hpp"
#include "bilex/rng.hpp"

using namespace bilex;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
    auto path = std::filesystem::temp_directory_path() / name;
    write_file(path.string(), content);
    return path.string();
}

DocumentStore random_store(Rng& rng, int n_docs, LanguageTag lang) {
    static const char* words[] = {"brand", "nu",     "winter", "de",
                                  "kogel", "balken", "is",     "want"};
    DocumentStore store;
    for (int i = 0; i < n_docs; ++i) {
        Document d;
        d.id = "doc" + std::to_string(i);
        d.lang = lang;
        const int len = 1 + static_cast<int>(rng.next_below(9));
        for (int k = 0; k < len; ++k) {
            if (k) d.text += ' ';
            d.text += words[rng.next_below(8)];
        }
        store.docs.push_back(std::move(d));
    }
    return store;
}

}  // namespace

TEST_CASE("ingest: empty file yields empty store") {
    auto path = write_temp("bilex_empty.jsonl", "");
    auto store = ingest(path, LanguageTag::L1);
    CHECK(store.empty());
}

TEST_CASE("ingest: two valid records tagged L1") {
    auto path = write_temp(
        "bilex_two.jsonl",
        R"({"id":"a","text":"De brand .","lang":"nl","ne_spans":[]})"
        "\n"
        R"({"id":"b","text":"Nu is het zo .","lang":"nl","ne_spans":[]})"
        "\n");
    auto store = ingest(path, LanguageTag::L1);
    REQUIRE(store.size() == 2);
    CHECK(store.docs[0].id == "a");  // order preserved
    CHECK(store.docs[1].id == "b");
    CHECK(store.docs[0].lang == LanguageTag::L1);
}

TEST_CASE("ingest: span end before start is rejected with the line") {
    auto path = write_temp(
        "bilex_badspan.jsonl",
        R"({"id":"a","text":"hello there","lang":"nl","ne_spans":[[5,3]]})"
        "\n");
    CHECK_THROWS_WITH(ingest(path, LanguageTag::L1),
                      Catch::Matchers::ContainsSubstring("span end before start") &&
                          Catch::Matchers::ContainsSubstring("line 1"));
}

TEST_CASE("ingest: out-of-bounds span and unknown language") {
    auto oob = write_temp(
        "bilex_oob.jsonl",
        R"({"id":"a","text":"hi","lang":"nl","ne_spans":[[0,99]]})" "\n");
    CHECK_THROWS_AS(ingest(oob, LanguageTag::L1), DataError);
    auto bad_lang = write_temp(
        "bilex_lang.jsonl", R"({"id":"a","text":"hi","lang":"xx"})" "\n");
    CHECK_THROWS_AS(ingest(bad_lang, LanguageTag::L1), DataError);
    auto wrong_lang = write_temp(
        "bilex_wrong.jsonl", R"({"id":"a","text":"hi","lang":"en"})" "\n");
    CHECK_THROWS_AS(ingest(wrong_lang, LanguageTag::L1), DataError);
}

TEST_CASE("ingest: malformed json reports the line number") {
    auto path = write_temp("bilex_malformed.jsonl",
                           "{\"id\":\"a\",\"text\":\"x\",\"lang\":\"nl\"}\n"
                           "this is not json\n");
    CHECK_THROWS_WITH(ingest(path, LanguageTag::L1),
                      Catch::Matchers::ContainsSubstring("line 2"));
}

TEST_CASE("word_tokenize: empty and single word") {
    CHECK(word_tokenize("").empty());
    auto toks = word_tokenize("winter");
    REQUIRE(toks.size() == 1);
    CHECK(toks[0].text == "winter");
    CHECK(toks[0].begin == 0);
    CHECK(toks[0].end == 6);
}

TEST_CASE("word_tokenize: punctuation splits off, case preserved") {
    auto toks = word_tokenize("De brand, nu.");
    std::vector<std::string> expect = {"De", "brand", ",", "nu", "."};
    REQUIRE(toks.size() == expect.size());
    for (size_t i = 0; i < expect.size(); ++i) CHECK(toks[i].text == expect[i]);
    // offsets reference the original string
    for (const auto& t : toks)
        CHECK(std::string("De brand, nu.").substr(t.begin, t.end - t.begin) ==
              t.text);
}

TEST_CASE("word_tokenize: unicode punctuation and whitespace") {
    auto toks = word_tokenize("zo«winter» nu");
    std::vector<std::string> expect = {"zo", "«", "winter", "»",
                                       "nu"};
    REQUIRE(toks.size() == expect.size());
    for (size_t i = 0; i < expect.size(); ++i) CHECK(toks[i].text == expect[i]);
}

TEST_CASE("count_frequencies: hand counts") {
    DocumentStore store;
    store.docs.push_back({"a", "brand brand nu", LanguageTag::L1, {}});
    auto table = count_frequencies(store);
    CHECK(table.count("brand") == 2);
    CHECK(table.count("nu") == 1);
    CHECK(table.total_tokens == 3);
}

TEST_CASE("count_frequencies: empty store") {
    auto table = count_frequencies({});
    CHECK(table.counts.empty());
    CHECK(table.total_tokens == 0);
}

TEST_CASE("count_frequencies: named-entity text is excluded") {
    DocumentStore store;
    store.docs.push_back(
        {"a", "Amsterdam brandt", LanguageTag::L1, {{0, 9}}});
    auto table = count_frequencies(store);
    CHECK(table.count("brandt") == 1);
    CHECK(table.count("amsterdam") == 0);
    CHECK(table.total_tokens == 1);
}

TEST_CASE("count_frequencies: keys are case-folded") {
    DocumentStore store;
    store.docs.push_back({"a", "Winter winter WINTER", LanguageTag::L1, {}});
    auto table = count_frequencies(store);
    CHECK(table.count("winter") == 3);
}

TEST_CASE("count_frequencies: mixed-language store is an error") {
    DocumentStore store;
    store.docs.push_back({"a", "x", LanguageTag::L1, {}});
    store.docs.push_back({"b", "y", LanguageTag::L2, {}});
    CHECK_THROWS_AS(count_frequencies(store), DataError);
}

TEST_CASE("log_normalize: degenerate support is an error") {
    FrequencyTable t;
    std::set<std::string> support = {"a", "b"};
    CHECK_THROWS_WITH(log_normalize(t, support),
                      Catch::Matchers::ContainsSubstring("zero variance"));
    CHECK_THROWS_AS(log_normalize(t, {}), DataError);
}

TEST_CASE("log_normalize: two-point z-scores are +-1") {
    FrequencyTable t;
    t.counts["a"] = 2;  // any two distinct counts give +-1
    auto nf = log_normalize(t, {"a", "b"});
    CHECK_THAT(nf.values.at("a"), Catch::Matchers::WithinAbs(1.0, 1e-12));
    CHECK_THAT(nf.values.at("b"), Catch::Matchers::WithinAbs(-1.0, 1e-12));
}

TEST_CASE("log_normalize: matches an independent recomputation") {
    FrequencyTable t;
    t.counts["a"] = 9;
    t.counts["b"] = 3;
    auto nf = log_normalize(t, {"a", "b", "c"});
    // second implementation of mean/sd in long double
    const long double xs[3] = {std::log1p(9.0L), std::log1p(3.0L),
                               std::log1p(0.0L)};
    long double mean = (xs[0] + xs[1] + xs[2]) / 3.0L;
    long double ss = 0.0L;
    for (auto x : xs) ss += (x - mean) * (x - mean);
    const long double sd = std::sqrt(ss / 2.0L);
    CHECK_THAT(nf.values.at("a"),
               Catch::Matchers::WithinAbs(double((xs[0] - mean) / sd), 1e-12));
    CHECK_THAT(nf.values.at("b"),
               Catch::Matchers::WithinAbs(double((xs[1] - mean) / sd), 1e-12));
    CHECK_THAT(nf.values.at("c"),
               Catch::Matchers::WithinAbs(double((xs[2] - mean) / sd), 1e-12));
}

TEST_CASE("frequency counting is order-independent and sums to total") {
    Rng rng(17);
    for (int round = 0; round < 20; ++round) {
        auto store = random_store(rng, 6, LanguageTag::L1);
        auto table = count_frequencies(store);
        std::int64_t sum = 0;
        for (const auto& [w, c] : table.counts) sum += c;
        CHECK(sum == table.total_tokens);

        auto shuffled = store;
        rng.shuffle(shuffled.docs);
        auto table2 = count_frequencies(shuffled);
        CHECK(table.counts == table2.counts);
        CHECK(table.total_tokens == table2.total_tokens);
    }
}

TEST_CASE("adding an NE span removes exactly the covered occurrences") {
    DocumentStore store;
    store.docs.push_back(
        {"a", "winter komt na winter en winter", LanguageTag::L1, {}});
    auto before = count_frequencies(store);
    // cover the second occurrence of "winter"
    const auto pos = store.docs[0].text.find("winter", 1);
    store.docs[0].ne_spans.push_back({pos, pos + 6});
    auto after = count_frequencies(store);
    CHECK(before.count("winter") - after.count("winter") == 1);
    CHECK(before.total_tokens - after.total_tokens == 1);
}

TEST_CASE("log_normalize output has mean 0 and sd 1 over the support") {
    Rng rng(23);
    FrequencyTable t;
    std::set<std::string> support;
    for (int i = 0; i < 12; ++i) {
        const std::string w = "w" + std::to_string(i);
        support.insert(w);
        t.counts[w] = static_cast<std::int64_t>(rng.next_below(50));
    }
    t.counts["w0"] = 77;  // guarantee variance
    auto nf = log_normalize(t, support);
    double mean = 0.0, ss = 0.0;
    for (const auto& [w, v] : nf.values) mean += v;
    mean /= static_cast<double>(nf.values.size());
    for (const auto& [w, v] : nf.values) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(nf.values.size() - 1));
    CHECK_THAT(mean, Catch::Matchers::WithinAbs(0.0, 1e-9));
    CHECK_THAT(sd, Catch::Matchers::WithinAbs(1.0, 1e-9));
}

TEST_CASE("frequency table TSV is sorted by count then form") {
    FrequencyTable t;
    t.counts = {{"bb", 3}, {"aa", 3}, {"cc", 9}};
    t.total_tokens = 15;
    auto tsv = frequency_table_tsv(t);
    CHECK(tsv == "cc\t9\naa\t3\nbb\t3\n");
    auto back = frequency_table_from_tsv(tsv, LanguageTag::L1);
    CHECK(back.counts == t.counts);
}
