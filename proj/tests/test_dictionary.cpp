#include "fairflow/dictionary.hpp"
#include "fairflow/errors.hpp"
#include "fairflow/fixtures.hpp"
#include "fairflow/rewrite.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <random>

using namespace fairflow;

namespace {

WordPairCandidate cand(std::string word, Group side, std::string cf, std::size_t votes, std::size_t total) {
    return {std::move(word), side, std::move(cf), votes, total};
}

// Exhaustive check that no word maps to two counterparts and lookups are symmetric.
bool exhaustively_bijective(const WordPairDictionary& d) {
    std::map<std::string, std::string> m;
    for (const auto& e : d.entries()) {
        if (e.word_a == e.word_b) return false;
        for (const auto& [k, v] : {std::pair{e.word_a, e.word_b}, std::pair{e.word_b, e.word_a}}) {
            if (m.contains(k)) return false;
            m[k] = v;
        }
    }
    for (const auto& [k, v] : m) {
        if (d.counterpart(k) != v || d.counterpart(v) != k) return false;
    }
    return d.bijective();
}

WordPairDictionary random_dictionary(std::mt19937_64& rng, std::size_t attempts, const std::string& prefix) {
    WordPairDictionary d;
    for (std::size_t i = 0; i < attempts; ++i) {
        const auto src = static_cast<PairSource>(rng() % 3);
        d.add({prefix + std::to_string(rng() % 60), prefix + std::to_string(rng() % 60), src, {}, {}});
    }
    return d;
}

NameFrequencyList names(Group g, std::vector<std::pair<std::string, std::size_t>> rows) {
    NameFrequencyList l;
    l.group = g;
    for (auto& [n, f] : rows) l.add(n, f);
    return l;
}

}  // namespace

TEST_CASE("dictionary add enforces the bijection and case-folds") {
    WordPairDictionary d;
    CHECK(d.add({"She", "HE", PairSource::prompt, {}, {}}) == WordPairDictionary::AddStatus::added);
    CHECK(d.counterpart("he") == "she");
    CHECK(d.counterpart("she") == "he");
    CHECK(d.add({"she", "he", PairSource::discovered, 3, 4}) == WordPairDictionary::AddStatus::duplicate);
    CHECK(d.add({"she", "him", PairSource::discovered, {}, {}}) == WordPairDictionary::AddStatus::conflict);
    CHECK(d.add({"her", "he", PairSource::discovered, {}, {}}) == WordPairDictionary::AddStatus::conflict);
    CHECK(d.add({"x", "X", PairSource::discovered, {}, {}}) == WordPairDictionary::AddStatus::self_pair);
    CHECK_THROWS_AS(d.add({"", "a", PairSource::discovered, {}, {}}), PreconditionError);
    CHECK(d.size() == 1);
}

TEST_CASE("assemble: threshold arithmetic and prompt inclusion") {
    const PromptPair prompt("she", "he");
    const auto r = assemble(prompt, {cand("her", Group::a, "his", 9, 10), cand("woman", Group::a, "man", 6, 10),
                                     cand("aunt", Group::a, "uncle", 2, 10)},
                            0.5);
    CHECK(r.dictionary.size() == 3);
    CHECK(r.dictionary.counterpart("woman") == "man");
    CHECK(r.dictionary.counterpart("she") == "he");
    CHECK_FALSE(r.dictionary.contains("aunt"));
    REQUIRE(r.dropped_below_threshold.size() == 1);
    CHECK(r.dropped_below_threshold[0].word == "aunt");
}

TEST_CASE("assemble: higher vote fraction wins a conflict, prompt always wins") {
    const PromptPair prompt("she", "he");
    const auto r = assemble(prompt, {cand("her", Group::a, "him", 7, 10), cand("her", Group::a, "his", 5, 10),
                                     cand("she", Group::a, "man", 10, 10)},
                            0.5);
    CHECK(r.dictionary.counterpart("her") == "him");
    CHECK_FALSE(r.dictionary.contains("his"));
    CHECK(r.dictionary.counterpart("she") == "he");
    CHECK_FALSE(r.dictionary.contains("man"));
    CHECK(r.conflicts.size() == 2);
    for (const auto& line : r.conflicts) CHECK(line.find("conflict") != std::string::npos);
}

TEST_CASE("assemble: both directions of a pair merge into one entry and polysemous words are flagged") {
    const PromptPair prompt("she", "he");
    const std::set<std::string> ambiguous = {"bachelor"};
    const auto r = assemble(prompt, {cand("woman", Group::a, "man", 8, 10), cand("man", Group::b, "woman", 9, 10),
                                     cand("spinster", Group::a, "bachelor", 3, 4)},
                            0.5, &ambiguous);
    const auto entries = r.dictionary.entries();
    const auto it = std::ranges::find_if(entries, [](const DictionaryEntry& e) { return e.word_a == "woman"; });
    REQUIRE(it != entries.end());
    CHECK(it->word_b == "man");
    CHECK(it->votes == 9);
    CHECK(it->total == 10);
    CHECK(r.conflicts.empty());
    REQUIRE(r.flagged_polysemous.size() == 1);
    CHECK(r.flagged_polysemous[0].word_b == "bachelor");
    CHECK(r.dictionary.contains("spinster"));
}

TEST_CASE("property: assemble output is always a bijection containing the prompt") {
    std::mt19937_64 rng(1);
    const std::vector<std::string> words = {"a0", "a1", "a2", "a3", "a4", "b0", "b1", "b2", "b3", "b4", "she", "he"};
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<WordPairCandidate> pairs;
        const std::size_t n = rng() % 15;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t total = 1 + rng() % 10;
            pairs.push_back(cand(words[rng() % words.size()], rng() % 2 ? Group::a : Group::b,
                                 words[rng() % words.size()], rng() % (total + 1), total));
        }
        const auto r = assemble(PromptPair("she", "he"), pairs, 0.5);
        REQUIRE(exhaustively_bijective(r.dictionary));
        REQUIRE(r.dictionary.counterpart("she") == "he");
        // Reordering the candidates does not change the result.
        std::ranges::shuffle(pairs, rng);
        REQUIRE(assemble(PromptPair("she", "he"), pairs, 0.5).dictionary == r.dictionary);
    }
}

TEST_CASE("names intervention matches by frequency rank") {
    const auto a = names(Group::a, {{"Mary", 50}, {"Anna", 100}});
    const auto b = names(Group::b, {{"John", 90}, {"Peter", 40}, {"Zed", 1}});
    const auto pairs = names_intervention(a, b);
    REQUIRE(pairs.size() == 2);
    CHECK(pairs[0].word_a == "anna");
    CHECK(pairs[0].word_b == "john");
    CHECK(pairs[1].word_a == "mary");
    CHECK(pairs[1].word_b == "peter");
    CHECK(pairs[0].source == PairSource::name);
    CHECK(names_intervention(a, NameFrequencyList{}).empty());
    CHECK_THROWS_AS(names(Group::a, {{"Anna", 1}, {"anna", 2}}), PreconditionError);
}

TEST_CASE("property: rank matching ignores input order and breaks ties by name") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::pair<std::string, std::size_t>> ra, rb;
        for (int i = 0; i < 12; ++i) {
            ra.emplace_back("f" + std::to_string(i), rng() % 5);
            rb.emplace_back("m" + std::to_string(i), rng() % 5);
        }
        const auto base = names_intervention(names(Group::a, ra), names(Group::b, rb));
        std::ranges::shuffle(ra, rng);
        std::ranges::shuffle(rb, rng);
        REQUIRE(names_intervention(names(Group::a, ra), names(Group::b, rb)) == base);
        const auto ranked = names(Group::a, ra).ranked();
        for (std::size_t i = 1; i < ranked.size(); ++i) {
            REQUIRE((ranked[i - 1].frequency > ranked[i].frequency ||
                     (ranked[i - 1].frequency == ranked[i].frequency && ranked[i - 1].name < ranked[i].name)));
        }
    }
}

TEST_CASE("name pairs rewrite the fixture example") {
    NameFrequencyList a, b;
    a.group = Group::a;
    b.group = Group::b;
    for (const auto& n : fixtures::fixture_names(Group::a)) a.add(n.name, n.frequency);
    for (const auto& n : fixtures::fixture_names(Group::b)) b.add(n.name, n.frequency);
    WordPairDictionary base;
    base.add({"her", "his", PairSource::prompt, {}, {}});
    WordPairDictionary extra;
    for (auto& e : names_intervention(a, b)) extra.add(e);
    const auto merged = merge(base, extra).dictionary;
    REQUIRE(merged.counterpart("laura").has_value());
    const auto doc = tokenize_document({"d", "Laura discovered her passion for physics .", {}, {}}, Tokenizer{});
    const auto out = substitute(doc, merged).text();
    const std::string male = apply_case(*merged.counterpart("laura"), "Laura");
    CHECK(out == male + " discovered his passion for physics .");
}

TEST_CASE("merge: union, base wins and the size identity holds") {
    WordPairDictionary base, extra;
    base.add({"she", "he", PairSource::prompt, {}, {}});
    base.add({"her", "his", PairSource::discovered, 5, 6});
    extra.add({"woman", "man", PairSource::discovered, 3, 3});
    extra.add({"her", "him", PairSource::discovered, 9, 9});
    extra.add({"she", "he", PairSource::name, {}, {}});
    const auto r = merge(base, extra);
    CHECK(r.dictionary.counterpart("her") == "his");
    CHECK(r.dictionary.counterpart("woman") == "man");
    CHECK(r.conflicts.size() == 2);
    CHECK(r.dictionary.size() == base.size() + extra.size() - r.conflicts.size());

    WordPairDictionary disjoint;
    disjoint.add({"aunt", "uncle", PairSource::name, {}, {}});
    CHECK(merge(base, disjoint).dictionary.size() == 3);
    CHECK(merge(base, disjoint).conflicts.empty());
}

TEST_CASE("property: merge keeps the bijection and the size identity on random dictionaries") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 300; ++trial) {
        const auto base = random_dictionary(rng, 30, "w");
        const auto extra = random_dictionary(rng, 30, "w");
        const auto r = merge(base, extra);
        REQUIRE(exhaustively_bijective(r.dictionary));
        REQUIRE(r.dictionary.size() == base.size() + extra.size() - r.conflicts.size());
        for (const auto& e : base.entries()) REQUIRE(r.dictionary.counterpart(e.word_a) == e.word_b);
    }
}

TEST_CASE("property: merge is associative when the inputs use disjoint words") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        const auto x = random_dictionary(rng, 20, "x");
        const auto y = random_dictionary(rng, 20, "y");
        const auto z = random_dictionary(rng, 20, "z");
        const auto left = merge(merge(x, y).dictionary, z).dictionary;
        const auto right = merge(x, merge(y, z).dictionary).dictionary;
        REQUIRE(left == right);
    }
}

TEST_CASE("TSV round trip is lossless and canonical") {
    std::mt19937_64 rng(5);
    WordPairDictionary d;
    for (int i = 0; d.size() < 1000; ++i) {
        const auto src = static_cast<PairSource>(rng() % 3);
        std::optional<std::size_t> votes, total;
        if (src == PairSource::discovered) {
            total = 1 + rng() % 50;
            votes = rng() % (*total + 1);
        }
        d.add({"a" + std::to_string(rng() % 100000), "b" + std::to_string(rng() % 100000), src, votes, total});
    }
    const auto text = d.to_tsv();
    const auto back = WordPairDictionary::from_tsv(text);
    CHECK(back == d);
    CHECK(back.to_tsv() == text);
    const auto dir = testing::temp_dir("dict");
    d.save(dir / "d.tsv");
    CHECK(WordPairDictionary::load(dir / "d.tsv") == d);

    const auto entries = d.entries();
    CHECK(std::ranges::is_sorted(entries, canonical_less));
}

TEST_CASE("malformed dictionary lines report their line number") {
    try {
        WordPairDictionary::from_tsv("she\the\tprompt\t-\t-\nlonely\n");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
    }
    CHECK_THROWS_AS(WordPairDictionary::from_tsv("she\the\tmystery\t-\t-\n"), ParseError);
    CHECK_THROWS_AS(WordPairDictionary::from_tsv("she\the\tprompt\t-\t-\nher\the\tprompt\t-\t-\n"), ParseError);
}

TEST_CASE("name lists load from TSV") {
    const auto dir = testing::temp_dir("names");
    std::ofstream(dir / "a.tsv") << "# name\tfrequency\nAnna\t10\nMary\t5\n";
    std::ofstream(dir / "bad.tsv") << "Anna\tten\n";
    const auto l = NameFrequencyList::load(dir / "a.tsv", Group::a);
    CHECK(l.names.size() == 2);
    CHECK(l.ranked()[0].name == "anna");
    CHECK_THROWS_AS(NameFrequencyList::load(dir / "bad.tsv", Group::a), ParseError);
}
