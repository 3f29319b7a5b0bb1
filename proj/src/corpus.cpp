#include "fairflow/corpus.hpp"

#include "fairflow/errors.hpp"
#include "fairflow/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>

namespace fairflow {

namespace {

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_punct(char c) {
    const auto u = static_cast<unsigned char>(c);
    return (u >= 33 && u <= 47) || (u >= 58 && u <= 64) || (u >= 91 && u <= 96) ||
           (u >= 123 && u <= 126);
}

constexpr std::size_t kMaxWordChars = 100;

}  // namespace

Group parse_group(std::string_view s) {
    if (s == "a" || s == "0") return Group::a;
    if (s == "b" || s == "1") return Group::b;
    throw PreconditionError("unknown group label '" + std::string(s) + "' (expected a or b)");
}

std::string case_fold(std::string_view s) {
    std::string out(s);
    for (char& c : out) {
        if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    return out;
}

std::string normalize_whitespace(std::string_view s) {
    std::string out;
    bool pending_space = false;
    for (char c : s) {
        if (is_space(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) out.push_back(' ');
        pending_space = false;
        out.push_back(c);
    }
    return out;
}

bool is_continuation(std::string_view piece) { return piece.starts_with(kContinuationPrefix); }

Tokenizer::Tokenizer(std::vector<std::string> vocabulary)
    : vocab_(vocabulary.begin(), vocabulary.end()) {}

Tokenizer Tokenizer::from_vocab_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw PreconditionError("cannot open vocabulary " + path.string());
    std::vector<std::string> vocab;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) vocab.push_back(line);
    }
    return Tokenizer(std::move(vocab));
}

std::vector<std::string> Tokenizer::pre_tokenize(std::string_view text) const {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        if (is_space(c) || is_punct(c)) {
            if (!cur.empty()) out.push_back(std::move(cur));
            cur.clear();
            if (is_punct(c)) out.emplace_back(1, c);
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

std::vector<std::string> Tokenizer::word_pieces(std::string_view word) const {
    if (vocab_.empty()) return {std::string(word)};
    if (word.size() > kMaxWordChars) return {std::string(kUnknownPiece)};
    const std::string lower = case_fold(word);
    std::vector<std::string> pieces;
    std::size_t start = 0;
    while (start < lower.size()) {
        std::size_t end = lower.size();
        bool found = false;
        while (end > start) {
            std::string sub = lower.substr(start, end - start);
            if (start > 0) sub = std::string(kContinuationPrefix) + sub;
            if (vocab_.contains(sub)) {
                found = true;
                break;
            }
            --end;
        }
        if (!found) return {std::string(kUnknownPiece)};
        std::string piece(word.substr(start, end - start));
        if (start > 0) piece = std::string(kContinuationPrefix) + piece;
        pieces.push_back(std::move(piece));
        start = end;
    }
    return pieces;
}

std::vector<Token> Tokenizer::tokenize(std::string_view text,
                                       std::vector<std::string>& subtokens) const {
    std::vector<Token> tokens;
    std::string cur;
    bool space_pending = false;
    bool cur_space_before = false;
    auto flush = [&] {
        if (cur.empty()) return;
        Token t;
        t.key = case_fold(cur);
        t.space_before = cur_space_before;
        t.subtoken_begin = subtokens.size();
        for (auto& p : word_pieces(cur)) subtokens.push_back(std::move(p));
        t.subtoken_end = subtokens.size();
        t.surface = std::move(cur);
        tokens.push_back(std::move(t));
        cur.clear();
    };
    for (char c : text) {
        if (is_space(c)) {
            flush();
            space_pending = true;
        } else if (is_punct(c)) {
            flush();
            cur.push_back(c);
            cur_space_before = space_pending && !tokens.empty();
            space_pending = false;
            flush();
        } else {
            if (cur.empty()) {
                cur_space_before = space_pending && !tokens.empty();
                space_pending = false;
            }
            cur.push_back(c);
        }
    }
    flush();
    return tokens;
}

std::string detokenize(const std::vector<Token>& tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i > 0 && tokens[i].space_before) out.push_back(' ');
        out += tokens[i].surface;
    }
    return out;
}

std::vector<std::string> join_pieces(std::span<const std::string> pieces) {
    std::vector<std::string> words;
    for (const auto& p : pieces) {
        if (is_continuation(p) && !words.empty()) {
            words.back() += p.substr(kContinuationPrefix.size());
        } else if (is_continuation(p)) {
            words.push_back(p.substr(kContinuationPrefix.size()));
        } else {
            words.push_back(p);
        }
    }
    return words;
}

std::size_t TokenizedCorpus::token_count() const {
    std::size_t n = 0;
    for (const auto& d : documents) n += d.tokens.size();
    return n;
}

std::optional<std::size_t> TokenizedCorpus::index_of(std::string_view id) const {
    auto it = id_index.find(id);
    if (it == id_index.end()) return std::nullopt;
    return it->second;
}

const Document& TokenizedCorpus::document(std::string_view id) const {
    auto idx = index_of(id);
    if (!idx) throw PreconditionError("unknown document id '" + std::string(id) + "'");
    return documents[*idx];
}

CorpusFormat parse_corpus_format(std::string_view s) {
    if (s == "jsonl") return CorpusFormat::jsonl;
    if (s == "plain") return CorpusFormat::plain;
    throw PreconditionError("unknown corpus format '" + std::string(s) + "'");
}

Document tokenize_document(RawDocument raw, const Tokenizer& tokenizer) {
    Document d;
    d.id = std::move(raw.id);
    d.text = std::move(raw.text);
    d.label = raw.label;
    d.group = raw.group;
    d.tokens = tokenizer.tokenize(d.text, d.subtokens);
    return d;
}

TokenizedCorpus make_corpus(std::vector<RawDocument> docs, Tokenizer tokenizer) {
    if (docs.empty()) throw EmptyCorpusError();
    TokenizedCorpus corpus;
    corpus.tokenizer = std::move(tokenizer);
    corpus.documents.reserve(docs.size());
    for (auto& raw : docs) {
        if (corpus.id_index.contains(raw.id)) {
            throw PreconditionError("duplicate document id '" + raw.id + "'");
        }
        corpus.id_index.emplace(raw.id, corpus.documents.size());
        corpus.documents.push_back(tokenize_document(std::move(raw), corpus.tokenizer));
    }
    return corpus;
}

std::vector<RawDocument> read_raw_documents(const std::filesystem::path& path, CorpusFormat format) {
    std::ifstream in(path);
    if (!in) throw PreconditionError("cannot open corpus " + path.string());
    std::vector<RawDocument> docs;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (normalize_whitespace(line).empty()) continue;
        RawDocument raw;
        raw.id = "doc-" + std::to_string(lineno);
        if (format == CorpusFormat::plain) {
            raw.text = line;
            docs.push_back(std::move(raw));
            continue;
        }
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(std::string("malformed JSON: ") + e.what(), lineno);
        }
        if (!rec.is_object() || !rec.contains("text") || !rec["text"].is_string()) {
            throw ParseError("record has no string field \"text\"", lineno);
        }
        raw.text = rec["text"].get<std::string>();
        try {
            if (rec.contains("id")) {
                raw.id = rec["id"].is_string() ? rec["id"].get<std::string>()
                                               : rec["id"].dump();
            }
            if (rec.contains("label") && !rec["label"].is_null()) raw.label = rec["label"].get<int>();
            if (rec.contains("group") && !rec["group"].is_null()) {
                const auto& g = rec["group"];
                raw.group = parse_group(g.is_string() ? g.get<std::string>() : g.dump());
            }
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("bad optional field: ") + e.what(), lineno);
        } catch (const PreconditionError& e) {
            throw ParseError(e.what(), lineno);
        }
        docs.push_back(std::move(raw));
    }
    if (docs.empty()) throw EmptyCorpusError();
    return docs;
}

TokenizedCorpus load_corpus(const std::filesystem::path& path, CorpusFormat format,
                            Tokenizer tokenizer) {
    return make_corpus(read_raw_documents(path, format), std::move(tokenizer));
}

Occurrence make_occurrence(const TokenizedCorpus& corpus, std::size_t doc_index,
                           std::size_t token_index, std::size_t window) {
    const Document& doc = corpus.documents.at(doc_index);
    if (token_index >= doc.tokens.size()) throw PreconditionError("token index out of range");
    const std::size_t left = window / 2;
    const std::size_t right = window > left ? window - left - 1 : 0;
    const std::size_t begin = token_index >= left ? token_index - left : 0;
    const std::size_t end = std::min(doc.tokens.size(), token_index + right + 1);
    Occurrence occ;
    occ.word = doc.tokens[token_index].key;
    occ.doc_id = doc.id;
    occ.doc_index = doc_index;
    occ.token_index = token_index;
    occ.center = token_index - begin;
    occ.context.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) occ.context.push_back(doc.tokens[i].key);
    return occ;
}

std::vector<Occurrence> find_occurrences(const TokenizedCorpus& corpus, std::string_view word,
                                         std::size_t window) {
    if (word.empty()) throw PreconditionError("find_occurrences: empty word");
    const std::string key = case_fold(word);
    std::vector<Occurrence> out;
    for (std::size_t d = 0; d < corpus.documents.size(); ++d) {
        const auto& toks = corpus.documents[d].tokens;
        for (std::size_t t = 0; t < toks.size(); ++t) {
            if (toks[t].key == key) out.push_back(make_occurrence(corpus, d, t, window));
        }
    }
    return out;
}

std::map<std::string, std::vector<TokenRef>> index_words(const TokenizedCorpus& corpus) {
    std::map<std::string, std::vector<TokenRef>> index;
    for (std::size_t d = 0; d < corpus.documents.size(); ++d) {
        const auto& toks = corpus.documents[d].tokens;
        for (std::size_t t = 0; t < toks.size(); ++t) index[toks[t].key].push_back({d, t});
    }
    return index;
}

}  // namespace fairflow
