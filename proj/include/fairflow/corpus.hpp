#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace fairflow {

// Binary demographic attribute label.
enum class Group { a, b };

inline Group other(Group g) { return g == Group::a ? Group::b : Group::a; }
inline const char* to_string(Group g) { return g == Group::a ? "a" : "b"; }
Group parse_group(std::string_view s);

std::string case_fold(std::string_view s);
// Collapses whitespace runs to one space and trims both ends.
std::string normalize_whitespace(std::string_view s);

struct Token {
    std::string surface;  // original casing
    std::string key;      // case-folded
    bool space_before = false;
    // Half-open range into Document::subtokens.
    std::size_t subtoken_begin = 0;
    std::size_t subtoken_end = 0;

    std::size_t subtoken_count() const { return subtoken_end - subtoken_begin; }
};

struct Document {
    std::string id;
    std::string text;
    std::optional<int> label;
    std::optional<Group> group;
    std::vector<Token> tokens;
    // Case-preserving wordpieces; continuation pieces carry the "##" prefix.
    std::vector<std::string> subtokens;
};

inline constexpr std::string_view kContinuationPrefix = "##";
inline constexpr std::string_view kUnknownPiece = "[UNK]";

bool is_continuation(std::string_view piece);

// Whitespace + ASCII punctuation pre-tokenizer, followed by greedy
// longest-match-first wordpiece segmentation when a vocabulary is set. Without
// a vocabulary every word is a single subtoken.
class Tokenizer {
public:
    Tokenizer() = default;
    explicit Tokenizer(std::vector<std::string> vocabulary);
    static Tokenizer from_vocab_file(const std::filesystem::path& path);

    bool has_vocabulary() const { return !vocab_.empty(); }
    std::size_t vocabulary_size() const { return vocab_.size(); }

    // Splits text into words, filling `subtokens` with the pieces of every word.
    std::vector<Token> tokenize(std::string_view text, std::vector<std::string>& subtokens) const;
    std::vector<std::string> pre_tokenize(std::string_view text) const;
    // Case-preserving pieces of one word.
    std::vector<std::string> word_pieces(std::string_view word) const;

private:
    std::unordered_set<std::string> vocab_;
};

std::string detokenize(const std::vector<Token>& tokens);
// Reassembles words from pieces: continuation pieces attach to the previous piece.
std::vector<std::string> join_pieces(std::span<const std::string> pieces);

struct RawDocument {
    std::string id;
    std::string text;
    std::optional<int> label;
    std::optional<Group> group;
};

struct TokenizedCorpus {
    std::vector<Document> documents;
    Tokenizer tokenizer;

    std::size_t token_count() const;
    const Document& document(std::string_view id) const;
    std::optional<std::size_t> index_of(std::string_view id) const;

    std::map<std::string, std::size_t, std::less<>> id_index;
};

enum class CorpusFormat { jsonl, plain };
CorpusFormat parse_corpus_format(std::string_view s);

Document tokenize_document(RawDocument raw, const Tokenizer& tokenizer);
TokenizedCorpus make_corpus(std::vector<RawDocument> docs, Tokenizer tokenizer);
// JSONL records need "text"; "id", "label", "group" are optional.
TokenizedCorpus load_corpus(const std::filesystem::path& path, CorpusFormat format,
                            Tokenizer tokenizer = {});
std::vector<RawDocument> read_raw_documents(const std::filesystem::path& path, CorpusFormat format);

inline constexpr std::size_t kDefaultContextWindow = 64;

struct Occurrence {
    std::string word;  // case-folded
    std::string doc_id;
    std::size_t doc_index = 0;
    std::size_t token_index = 0;
    std::vector<std::string> context;  // case-folded window containing the word
    std::size_t center = 0;            // position of the word inside `context`
};

Occurrence make_occurrence(const TokenizedCorpus& corpus, std::size_t doc_index,
                           std::size_t token_index, std::size_t window = kDefaultContextWindow);

std::vector<Occurrence> find_occurrences(const TokenizedCorpus& corpus, std::string_view word,
                                         std::size_t window = kDefaultContextWindow);

struct TokenRef {
    std::size_t doc_index = 0;
    std::size_t token_index = 0;
};

// Case-folded word -> every position it occurs at, in corpus order.
std::map<std::string, std::vector<TokenRef>> index_words(const TokenizedCorpus& corpus);

}  // namespace fairflow
