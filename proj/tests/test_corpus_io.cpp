#include "fairflow/corpus.hpp"
#include "fairflow/embedding.hpp"
#include "fairflow/errors.hpp"
#include "fairflow/fixtures.hpp"
#include "fairflow/io.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <fstream>
#include <random>

using namespace fairflow;

namespace {

std::filesystem::path write_text(const std::string& name, const std::string& body) {
    const auto dir = testing::temp_dir("corpus-" + name);
    const auto path = dir / "input.txt";
    std::ofstream(path) << body;
    return path;
}

Tokenizer fixture_tokenizer() { return Tokenizer(fixtures::fixture_vocabulary()); }

}  // namespace

TEST_CASE("a one-record JSONL corpus tokenizes into four tokens") {
    const auto path = write_text("one", "{\"text\":\"She is a nurse\"}\n");
    const auto corpus = load_corpus(path, CorpusFormat::jsonl);
    REQUIRE(corpus.documents.size() == 1);
    CHECK(corpus.documents[0].tokens.size() == 4);
    CHECK(corpus.documents[0].tokens[0].surface == "She");
    CHECK(corpus.documents[0].tokens[0].key == "she");
    CHECK(corpus.documents[0].id == "doc-1");
}

TEST_CASE("empty corpora and malformed records are rejected") {
    CHECK_THROWS_AS(load_corpus(write_text("empty", ""), CorpusFormat::jsonl), EmptyCorpusError);
    CHECK_THROWS_AS(load_corpus(write_text("blank", "\n  \n"), CorpusFormat::plain), EmptyCorpusError);
    try {
        load_corpus(write_text("bad", "{\"text\":\"ok\"}\n{\"txt\":\"no\"}\n"), CorpusFormat::jsonl);
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    try {
        load_corpus(write_text("json", "{\"text\":\"ok\"}\n\n{not json\n"), CorpusFormat::jsonl);
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 3);
    }
    CHECK_THROWS_AS(load_corpus(write_text("group", "{\"text\":\"x\",\"group\":\"c\"}\n"), CorpusFormat::jsonl),
                    ParseError);
    CHECK_THROWS_AS(load_corpus("/nonexistent/corpus.jsonl", CorpusFormat::jsonl), PreconditionError);
    CHECK_THROWS_AS(make_corpus({RawDocument{"x", "a", {}, {}}, RawDocument{"x", "b", {}, {}}}, {}),
                    PreconditionError);
}

TEST_CASE("optional JSONL fields are parsed") {
    const auto path =
        write_text("fields", "{\"id\":\"d7\",\"text\":\"He left .\",\"label\":1,\"group\":\"b\"}\n"
                             "{\"id\":5,\"text\":\"She left .\",\"group\":\"a\",\"label\":null}\n");
    const auto corpus = load_corpus(path, CorpusFormat::jsonl);
    CHECK(corpus.document("d7").label == 1);
    CHECK(corpus.document("d7").group == Group::b);
    CHECK(corpus.document("5").group == Group::a);
    CHECK_FALSE(corpus.document("5").label.has_value());
    CHECK_THROWS_AS(corpus.document("missing"), PreconditionError);
}

TEST_CASE("duchesses spans two subtokens under the fixture wordpiece vocabulary") {
    const auto path = write_text("duchess", "{\"text\":\"The men are duchesses\"}\n");
    const auto corpus = load_corpus(path, CorpusFormat::jsonl, fixture_tokenizer());
    const auto& doc = corpus.documents[0];
    REQUIRE(doc.tokens.size() == 4);
    CHECK(doc.tokens[3].subtoken_count() == 2);
    CHECK(doc.subtokens == std::vector<std::string>{"The", "men", "are", "duchess", "##es"});
}

TEST_CASE("property: subtoken spans are contiguous and detokenization reproduces normalized text") {
    std::mt19937_64 rng(3);
    const auto tok = fixture_tokenizer();
    const std::vector<std::string> alphabet = {"she", "He", "duchesses", "nurse", ",", ".", "!", "(", ")",
                                               "SAID", "qzx", "men", "'", "photographer", "-"};
    for (int trial = 0; trial < 500; ++trial) {
        std::string text;
        const std::size_t n = 1 + rng() % 15;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t spaces = rng() % 3;
            text += std::string(spaces, rng() % 2 ? ' ' : '\t');
            text += alphabet[rng() % alphabet.size()];
        }
        const Document doc = tokenize_document(RawDocument{"x", text, {}, {}}, tok);
        std::size_t expected_begin = 0;
        for (const auto& t : doc.tokens) {
            CHECK(t.subtoken_begin == expected_begin);
            CHECK(t.subtoken_end > t.subtoken_begin);
            expected_begin = t.subtoken_end;
        }
        CHECK(expected_begin == doc.subtokens.size());
        // Normalization collapses whitespace runs; punctuation adjacency is kept.
        CHECK(detokenize(doc.tokens) == normalize_whitespace(text));
    }
}

TEST_CASE("occurrences: trivial cases") {
    const auto corpus = make_corpus({RawDocument{"d", "She is. He is.", {}, {}}}, {});
    const auto occ = find_occurrences(corpus, "she");
    REQUIRE(occ.size() == 1);
    CHECK(occ[0].token_index == 0);
    CHECK(occ[0].word == "she");
    CHECK(occ[0].context[occ[0].center] == "she");
    CHECK(find_occurrences(corpus, "nurse").empty());
    CHECK_THROWS_AS(find_occurrences(corpus, ""), PreconditionError);
}

TEST_CASE("occurrences: 37 planted instances over 100 documents match a linear scan") {
    std::mt19937_64 rng(9);
    const auto& filler = fixtures::distractor_words();
    std::vector<RawDocument> docs;
    std::vector<std::pair<std::size_t, std::size_t>> planted;
    for (std::size_t d = 0; d < 100; ++d) {
        std::string text;
        const std::size_t len = 5 + rng() % 10;
        for (std::size_t i = 0; i < len; ++i) {
            if (!text.empty()) text += ' ';
            const bool plant = planted.size() < 37 && rng() % 6 == 0;
            if (plant) planted.emplace_back(d, i);
            text += plant ? (rng() % 2 ? "He" : "he") : filler[rng() % filler.size()];
        }
        docs.push_back(RawDocument{"d" + std::to_string(d), text, {}, {}});
    }
    REQUIRE(planted.size() == 37);
    const auto corpus = make_corpus(docs, {});
    const auto occ = find_occurrences(corpus, "HE");
    REQUIRE(occ.size() == 37);
    for (std::size_t i = 0; i < occ.size(); ++i) {
        CHECK(occ[i].doc_index == planted[i].first);
        CHECK(occ[i].token_index == planted[i].second);
    }
    const auto index = index_words(corpus);
    CHECK(index.at("he").size() == 37);
}

TEST_CASE("property: occurrence counts equal a brute-force token count") {
    const auto docs = fixtures::planted_vocabulary_corpus(60, 4);
    const auto corpus = make_corpus(docs, {});
    for (const std::string& w : std::vector<std::string>{"she", "he", "her", "his", "woman", "man", fixtures::distractor_words()[0]}) {
        std::size_t brute = 0;
        for (const auto& d : docs) {
            for (const auto& piece : Tokenizer{}.pre_tokenize(d.text)) brute += case_fold(piece) == w;
        }
        CHECK(find_occurrences(corpus, w).size() == brute);
    }
}

TEST_CASE("context windows are centred and bounded") {
    std::string text;
    for (int i = 0; i < 200; ++i) text += "w" + std::to_string(i) + " ";
    const auto corpus = make_corpus({RawDocument{"d", text, {}, {}}}, {});
    const auto occ = make_occurrence(corpus, 0, 100, 64);
    CHECK(occ.context.size() == 64);
    CHECK(occ.context[occ.center] == "w100");
    CHECK(occ.center == 32);
    const auto edge = make_occurrence(corpus, 0, 0, 64);
    CHECK(edge.center == 0);
    CHECK(edge.context.size() == 32);
    CHECK_THROWS_AS(make_occurrence(corpus, 0, 200, 64), PreconditionError);
}

TEST_CASE("toy backend is deterministic, context-sensitive and truncates long windows") {
    ToyBackendConfig cfg;
    cfg.dim = 16;
    ToyBackend backend(cfg, fixtures::planted_lexicon());
    const auto corpus = make_corpus({RawDocument{"a", "she went home", {}, {}},
                                     RawDocument{"b", "yesterday she sang loudly", {}, {}}},
                                    {});
    const auto occ = find_occurrences(corpus, "she");
    const auto e1 = backend.embed(occ[0]);
    const auto e2 = backend.embed(occ[0]);
    CHECK(e1.vector.size() == 16);
    CHECK(e1.vector == e2.vector);
    CHECK(e1.vector != backend.embed(occ[1]).vector);
    CHECK_FALSE(e1.truncated);

    cfg.max_length = 4;
    ToyBackend short_backend(cfg, fixtures::planted_lexicon());
    std::string text;
    for (int i = 0; i < 20; ++i) text += "x" + std::to_string(i) + " ";
    const auto long_corpus = make_corpus({RawDocument{"c", text + "she", {}, {}}}, {});
    const auto t = short_backend.embed(find_occurrences(long_corpus, "she")[0]);
    CHECK(t.truncated);
    CHECK(t.vector.size() == 16);

    CHECK_THROWS_AS(make_embedding_backend("bogus", cfg, {}), PreconditionError);
}

TEST_CASE("embedding cache round trip and corruption detection") {
    EmbeddingCache cache;
    cache.backend = "toy";
    cache.dim = 3;
    cache.records.push_back({"doc-1", 4, 1, {1.0, -2.5, 3.25}});
    cache.records.push_back({"doc-2", 0, 0, {0.0, 1e-300, -7.0}});
    const auto dir = testing::temp_dir("cache");
    cache.save(dir / "e.bin");
    const auto back = EmbeddingCache::load(dir / "e.bin");
    CHECK(back.backend == "toy");
    CHECK(back.dim == 3);
    REQUIRE(back.records.size() == 2);
    CHECK(back.records[0].doc_id == "doc-1");
    CHECK(back.records[0].token_index == 4);
    CHECK(back.records[0].flags == 1);
    CHECK(back.records[1].vector == cache.records[1].vector);
    auto bytes = cache.serialize();
    CHECK_THROWS(EmbeddingCache::deserialize(bytes.substr(0, bytes.size() - 3)));
    bytes[0] = 'X';
    CHECK_THROWS(EmbeddingCache::deserialize(bytes));
}
