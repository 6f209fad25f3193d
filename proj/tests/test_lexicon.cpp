#include <catch2/catch_amalgamated.hpp>

#include "bilex/lexicon.hpp"
#include "bilex/rng.hpp"

using namespace bilex;

namespace {

FrequencyTable table_of(LanguageTag lang,
                        std::map<std::string, std::int64_t> counts) {
    FrequencyTable t;
    t.lang = lang;
    t.counts = std::move(counts);
    for (const auto& [w, c] : t.counts) t.total_tokens += c;
    return t;
}

WordKlass klass_of(const std::vector<LexiconEntry>& entries,
                   const std::string& form) {
    for (const auto& e : entries)
        if (e.form == form) return e.klass;
    throw std::runtime_error("no entry " + form);
}

}  // namespace

TEST_CASE("find_overlap: intersection with count >= 1 on both sides") {
    auto l1 = table_of(LanguageTag::L1, {{"brand", 2}});
    auto l2 = table_of(LanguageTag::L2, {{"brand", 5}, {"prison", 1}});
    CHECK(find_overlap(l1, l2) == std::set<std::string>{"brand"});

    auto d1 = table_of(LanguageTag::L1, {{"kogel", 1}});
    auto d2 = table_of(LanguageTag::L2, {{"prison", 1}});
    CHECK(find_overlap(d1, d2).empty());

    auto s1 = table_of(LanguageTag::L1, {{"is", 1}, {"winter", 1}});
    auto s2 = table_of(LanguageTag::L2, {{"is", 1}, {"winter", 1}});
    CHECK(find_overlap(s1, s2) == std::set<std::string>{"is", "winter"});
}

TEST_CASE("find_overlap: same-language inputs rejected") {
    auto a = table_of(LanguageTag::L1, {{"x", 1}});
    auto b = table_of(LanguageTag::L1, {{"x", 1}});
    CHECK_THROWS_AS(find_overlap(a, b), DataError);
}

TEST_CASE("classify: a form annotated friend and falsefriend is ambiguous") {
    AnnotationFile friends =
        parse_annotations("winter\tfriend\nmonster\tfriend\n", "friends.tsv");
    AnnotationFile ffs = parse_annotations(
        "brand\tfalsefriend\nmonster\tfalsefriend\n", "ffs.tsv");
    auto entries =
        classify({"winter", "brand", "monster"}, {friends, ffs});
    CHECK(klass_of(entries, "winter") == WordKlass::Friend);
    CHECK(klass_of(entries, "brand") == WordKlass::FalseFriend);
    CHECK(klass_of(entries, "monster") == WordKlass::Ambiguous);
}

TEST_CASE("classify: unannotated overlap is other; empty overlap is empty") {
    CHECK(klass_of(classify({"xyzzy"}, {}), "xyzzy") == WordKlass::Other);
    CHECK(classify({}, {}).empty());
}

TEST_CASE("classify: punctuation-only forms get the punctuation klass") {
    auto entries = classify({".", ",", "niet"}, {});
    CHECK(klass_of(entries, ".") == WordKlass::Punctuation);
    CHECK(klass_of(entries, ",") == WordKlass::Punctuation);
    CHECK(klass_of(entries, "niet") == WordKlass::Other);
}

TEST_CASE("classify is order-independent over annotation files") {
    AnnotationFile a = parse_annotations("winter\tfriend\n", "a.tsv");
    AnnotationFile b = parse_annotations("brand\tfalsefriend\n", "b.tsv");
    auto e1 = classify({"winter", "brand"}, {a, b});
    auto e2 = classify({"winter", "brand"}, {b, a});
    REQUIRE(e1.size() == e2.size());
    for (size_t i = 0; i < e1.size(); ++i) {
        CHECK(e1[i].form == e2[i].form);
        CHECK(e1[i].klass == e2[i].klass);
    }
}

TEST_CASE("annotation parsing rejects conflicts, uppercase and bad klass") {
    CHECK_THROWS_WITH(
        parse_annotations("x\tfriend\nx\tfalsefriend\n", "t.tsv"),
        Catch::Matchers::ContainsSubstring("conflicting duplicate"));
    CHECK_THROWS_AS(parse_annotations("Xy\tfriend\n", "t.tsv"), DataError);
    CHECK_THROWS_AS(parse_annotations("xy\tcognate\n", "t.tsv"), DataError);
    // exact duplicates are tolerated
    auto f = parse_annotations("x\tfriend\nx\tfriend\n", "t.tsv");
    CHECK(f.rows.size() == 1);
}

namespace {

struct Fixture {
    std::set<std::string> overlap = {"winter", "brand", "is", "want",
                                     "monster", "."};
    std::vector<LexiconEntry> entries;
    std::set<std::string> punct = {".", ","};
    std::set<std::string> ne_markers = {};
    std::set<std::string> controls = {"kogel", "prison"};

    Fixture() {
        AnnotationFile f = parse_annotations(
            "winter\tfriend\nmonster\tfriend\n", "friends.tsv");
        AnnotationFile g = parse_annotations(
            "brand\tfalsefriend\nmonster\tfalsefriend\n", "ffs.tsv");
        AnnotationFile c = parse_annotations(
            "kogel\tcontrol\nprison\tcontrol\n", "controls.tsv");
        entries = classify(overlap, {f, g, c});
    }

    ConditionManifest manifest(Condition cond) const {
        return build_manifest(cond, entries, overlap, punct, ne_markers,
                              controls);
    }
};

}  // namespace

TEST_CASE("build_manifest: D shares exactly punctuation and NE markers") {
    Fixture fx;
    auto d = fx.manifest(Condition::D_minimal);
    CHECK(d.shared_forms == std::set<std::string>{".", ","});
}

TEST_CASE("build_manifest: B shares friends, not false friends") {
    Fixture fx;
    auto b = fx.manifest(Condition::B_friends);
    CHECK(b.shared_forms.count("winter") == 1);
    CHECK(b.shared_forms.count("brand") == 0);
    CHECK(b.shared_forms.count("monster") == 0);  // ambiguous excluded
}

TEST_CASE("build_manifest: A shares every overlapping form") {
    Fixture fx;
    auto a = fx.manifest(Condition::A_full);
    for (const auto& w : {"winter", "brand", "is", "want", "monster"})
        CHECK(a.shared_forms.count(w) == 1);
}

TEST_CASE("manifest invariants hold as set algebra") {
    Fixture fx;
    auto a = fx.manifest(Condition::A_full);
    auto b = fx.manifest(Condition::B_friends);
    auto c = fx.manifest(Condition::C_falsefriends);
    auto d = fx.manifest(Condition::D_minimal);

    // B and C extend D; their intersection is exactly D
    std::set<std::string> bc;
    for (const auto& w : b.shared_forms)
        if (c.shared_forms.count(w)) bc.insert(w);
    CHECK(bc == d.shared_forms);
    for (const auto& w : d.shared_forms) {
        CHECK(b.shared_forms.count(w) == 1);
        CHECK(c.shared_forms.count(w) == 1);
    }
    // A contains B union C
    for (const auto& w : b.shared_forms) CHECK(a.shared_forms.count(w) == 1);
    for (const auto& w : c.shared_forms) CHECK(a.shared_forms.count(w) == 1);
    // no ambiguous form in B or C
    CHECK(b.shared_forms.count("monster") == 0);
    CHECK(c.shared_forms.count("monster") == 0);
    // forced set is condition-independent
    CHECK(a.forced_single == b.forced_single);
    CHECK(b.forced_single == c.forced_single);
    CHECK(c.forced_single == d.forced_single);
    CHECK(d.forced_single ==
          std::set<std::string>{"winter", "brand", "kogel", "prison"});
}

TEST_CASE("build_manifest warns about forced forms absent from both corpora") {
    Fixture fx;
    auto l1 = table_of(LanguageTag::L1, {{"winter", 1}, {"brand", 1}});
    auto l2 = table_of(LanguageTag::L2, {{"winter", 1}, {"brand", 1}});
    auto m = build_manifest(Condition::B_friends, fx.entries, fx.overlap,
                            fx.punct, fx.ne_markers, fx.controls, &l1, &l2);
    REQUIRE(m.warnings.size() == 2);  // kogel and prison are unattested
}

TEST_CASE("manifest JSON export round trip with sorted arrays") {
    Fixture fx;
    auto b = fx.manifest(Condition::B_friends);
    json j = manifest_to_json(b);
    auto arr = j["shared_forms"].get<std::vector<std::string>>();
    CHECK(std::is_sorted(arr.begin(), arr.end()));
    auto back = manifest_from_json(j);
    CHECK(back.condition == b.condition);
    CHECK(back.shared_forms == b.shared_forms);
    CHECK(back.forced_single == b.forced_single);
    CHECK(manifest_to_json(back).dump() == j.dump());
}
