#pragma once

// Counterfactual rewriting: dictionary substitution followed by error
// correction (flag implausible tokens, mask their whole subtoken groups,
// infill the masks left to right).

#include "fairflow/corpus.hpp"
#include "fairflow/dictionary.hpp"
#include "fairflow/kernels.hpp"

#include <json.hpp>

#include <map>
#include <memory>
#include <unordered_map>
#include <optional>
#include <string>
#include <vector>

namespace fairflow {

inline constexpr std::string_view kMaskToken = "<mask>";

enum class CasePattern { lower, capitalized, upper, other };
CasePattern case_pattern(std::string_view word);
// Applies the casing pattern of `like` to `word` (other: word unchanged).
std::string apply_case(std::string_view word, std::string_view like);

// Word-level text being rewritten. `origin` is the index of the base-text
// token a word descends from; `protect` marks substituted attribute words.
struct WorkingText {
    std::vector<std::string> words;
    std::vector<bool> space_before;
    std::vector<bool> protect;
    std::vector<std::size_t> origin;

    static WorkingText from_document(const Document& doc);
    std::size_t size() const { return words.size(); }
    std::vector<std::string> keys() const;  // case-folded words
    std::string text() const;
};

struct Substitution {
    std::size_t token_index = 0;
    std::string original;
    std::string replacement;
};

struct MaskedSpan {
    std::size_t token_index = 0;  // word index in the text that was masked
    std::size_t subtoken_begin = 0;
    std::size_t subtoken_end = 0;
    std::size_t pass = 0;
};

struct InfillRecord {
    std::size_t token_index = 0;
    std::string replaced;
    std::vector<std::string> inserted;  // subtokens
    std::size_t pass = 0;
};

struct RewriteTrace {
    std::vector<Substitution> substitutions;
    std::vector<MaskedSpan> masked_spans;
    std::vector<InfillRecord> infills;
    std::vector<std::string> flags;

    nlohmann::ordered_json to_json() const;
    static RewriteTrace from_json(const nlohmann::json& j);
};

// Replaces every dictionary word (case-folded lookup) by its counterpart with
// the casing pattern preserved; substituted words are marked protected.
WorkingText substitute(const Document& doc, const WordPairDictionary& dict, RewriteTrace* trace = nullptr);

// ---- error correction ---------------------------------------------------

struct CorrectionConfig {
    bool enabled = true;
    double theta = 0.1;
    double max_mask_fraction = 0.3;
    bool protect_substituted = true;
    std::size_t passes = 1;  // 1..3
};
void validate(const CorrectionConfig& cfg);

// Per-token plausibility in [0, 1] of each word given the rest of the text.
class DiscriminatorBackend {
public:
    virtual ~DiscriminatorBackend() = default;
    virtual std::string name() const = 0;
    virtual bool deterministic() const = 0;
    virtual std::vector<double> score(const std::vector<std::string>& keys) const = 0;
};

struct MaskedText {
    struct Word {
        std::size_t piece_begin = 0;
        std::size_t piece_end = 0;
        bool masked = false;
        bool space_before = false;
        bool protect = false;
        std::size_t origin = 0;
        std::string original;  // surface before masking
    };
    std::vector<std::string> pieces;  // each masked word is a single kMaskToken
    std::vector<Word> words;
    std::string origin_text;

    std::size_t mask_count() const;
    std::string text() const;  // detokenised, masks rendered as <mask>
};

// Emits the subtokens for one mask given the surrounding text.
class InfillerBackend {
public:
    virtual ~InfillerBackend() = default;
    virtual std::string name() const = 0;
    virtual bool deterministic() const = 0;
    // `word_index` is a masked entry of masked.words.
    virtual std::vector<std::string> fill(const MaskedText& masked, std::size_t word_index) const = 0;
};

// Indices with score < theta, skipping protected words when configured,
// keeping at most floor(max_mask_fraction * n) of the lowest-scoring ones
// (ties by position), returned in ascending order.
std::vector<std::size_t> detect_erratic(const std::vector<double>& scores, const std::vector<bool>& protect,
                                        const CorrectionConfig& cfg);
std::vector<std::size_t> detect_erratic(const WorkingText& text, const DiscriminatorBackend& disc,
                                        const CorrectionConfig& cfg);

// Each flagged word's full subtoken span becomes one mask sentinel.
MaskedText mask_subtoken_groups(const WorkingText& text, const Tokenizer& tokenizer,
                                const std::vector<std::size_t>& indices);
MaskedText mask_subtoken_groups(const Document& doc, const std::vector<std::size_t>& indices);

// Greedy left-to-right infilling; earlier fills are visible to later masks.
WorkingText infill(MaskedText masked, const InfillerBackend& gen, RewriteTrace* trace = nullptr,
                   std::size_t pass = 0);

// Substituted text -> corrected text for the configured number of passes.
WorkingText correct(WorkingText text, const Tokenizer& tokenizer, const DiscriminatorBackend& disc,
                    const InfillerBackend& gen, const CorrectionConfig& cfg, RewriteTrace* trace = nullptr);

// ---- toy masked language model ----------------------------------------

struct ToyMlmConfig {
    double alpha = 0.1;  // add-alpha smoothing of every conditional
};

// Naive-Bayes conditional over the vocabulary: a word is scored by its
// unigram prior, the left and right neighbour it is seen with, and the words
// it co-occurs with in a sentence.
class ToyMaskedLM {
public:
    ToyMaskedLM() = default;
    ToyMaskedLM(const std::vector<std::vector<std::string>>& sentences, ToyMlmConfig cfg = {});

    const std::vector<std::string>& vocabulary() const { return vocab_; }
    // Log-score of every vocabulary word at `position` of `keys`. Context
    // entries listed in `ignore` (e.g. other masks) are skipped.
    std::vector<double> candidate_scores(const std::vector<std::string>& keys, std::size_t position,
                                         const std::vector<bool>* ignore = nullptr) const;
    double log_score(const std::string& word, const std::vector<std::string>& keys, std::size_t position,
                     const std::vector<bool>* ignore = nullptr) const;

private:
    std::optional<std::size_t> id(const std::string& w) const;

    ToyMlmConfig cfg_;
    std::vector<std::string> vocab_;
    std::map<std::string, std::size_t, std::less<>> ids_;
    std::vector<double> unigram_;
    std::unordered_map<std::uint64_t, double> left_;   // (prev, word)
    std::unordered_map<std::uint64_t, double> right_;  // (word, next)
    std::unordered_map<std::uint64_t, double> cooc_;   // (word, other)
    std::vector<double> cooc_total_;
    double total_ = 0.0;
    std::size_t context_types_ = 0;
};

// Plausibility = exp(score(t) - max_x score(x)).
class ToyDiscriminator : public DiscriminatorBackend {
public:
    explicit ToyDiscriminator(std::shared_ptr<const ToyMaskedLM> lm) : lm_(std::move(lm)) {}
    std::string name() const override { return "toy"; }
    bool deterministic() const override { return true; }
    std::vector<double> score(const std::vector<std::string>& keys) const override;

private:
    std::shared_ptr<const ToyMaskedLM> lm_;
};

// Highest-scoring vocabulary word, emitted as its wordpieces with the casing
// of the masked word.
class ToyInfiller : public InfillerBackend {
public:
    ToyInfiller(std::shared_ptr<const ToyMaskedLM> lm, Tokenizer tokenizer)
        : lm_(std::move(lm)), tokenizer_(std::move(tokenizer)) {}
    std::string name() const override { return "toy"; }
    bool deterministic() const override { return true; }
    std::vector<std::string> fill(const MaskedText& masked, std::size_t word_index) const override;

private:
    std::shared_ptr<const ToyMaskedLM> lm_;
    Tokenizer tokenizer_;
};

std::vector<std::vector<std::string>> corpus_sentences(const TokenizedCorpus& corpus);

// "toy" builds on `lm`; "pretrained:<id>" raises BackendError.
std::unique_ptr<DiscriminatorBackend> make_discriminator(const std::string& spec,
                                                         std::shared_ptr<const ToyMaskedLM> lm);
std::unique_ptr<InfillerBackend> make_infiller(const std::string& spec, std::shared_ptr<const ToyMaskedLM> lm,
                                               const Tokenizer& tokenizer);

// ---- parallel corpus ----------------------------------------------------

struct ParallelRecord {
    std::string id;
    std::string src;
    std::string tgt;
    bool noop = false;  // substitution changed nothing
    RewriteTrace trace;

    nlohmann::ordered_json to_json() const;
    static ParallelRecord from_json(const nlohmann::json& j);
};

struct ParallelCorpusConfig {
    CorrectionConfig correction;
    bool include_noop = true;
};

// One record per document in corpus order. Backend failures on a document
// keep the substituted text and add a flag to its trace.
std::vector<ParallelRecord> build_parallel_corpus(const TokenizedCorpus& corpus, const WordPairDictionary& dict,
                                                  const DiscriminatorBackend& disc, const InfillerBackend& gen,
                                                  const ParallelCorpusConfig& cfg,
                                                  kernels::Exec exec = kernels::Exec::parallel);

std::string parallel_to_jsonl(const std::vector<ParallelRecord>& records);
std::vector<ParallelRecord> parallel_from_jsonl(const std::string& text);

}  // namespace fairflow
