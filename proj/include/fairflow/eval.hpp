#pragma once

// Evaluation harness: perplexity under a scoring language model, attribute
// transfer accuracy, group fairness gaps, task accuracy/F1 and bias-induced
// dataset sampling.

#include "fairflow/corpus.hpp"
#include "fairflow/embedding.hpp"
#include "fairflow/subspace.hpp"

#include <json.hpp>

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace fairflow {

// Case-folded word tokens used by every scorer.
std::vector<std::string> lm_tokens(const std::string& text);

class LanguageModel {
public:
    virtual ~LanguageModel() = default;
    virtual std::string name() const = 0;
    // Natural-log probability of every token followed by the end marker
    // (tokens.size() + 1 values).
    virtual std::vector<double> log_probs(const std::vector<std::string>& tokens) const = 0;
};

class UniformLM : public LanguageModel {
public:
    explicit UniformLM(std::size_t vocabulary_size);
    std::string name() const override { return "uniform"; }
    std::vector<double> log_probs(const std::vector<std::string>& tokens) const override;

private:
    std::size_t v_;
};

// Interpolated Witten-Bell trigram model over case-folded words. The base
// distribution is uniform over the training vocabulary plus <unk> and </s>.
class WittenBellTrigram : public LanguageModel {
public:
    explicit WittenBellTrigram(const std::vector<std::vector<std::string>>& sentences);
    static WittenBellTrigram from_texts(const std::vector<std::string>& texts);

    std::string name() const override { return "witten-bell-trigram"; }
    std::vector<double> log_probs(const std::vector<std::string>& tokens) const override;
    std::size_t vocabulary_size() const { return ids_.size(); }  // including <unk> and </s>

private:
    struct Stats {
        double total = 0.0;
        std::unordered_map<std::size_t, double> next;
    };
    std::size_t id(const std::string& w) const;
    double prob(std::size_t u, std::size_t v, std::size_t w) const;

    std::unordered_map<std::string, std::size_t> ids_;
    Stats unigram_;
    std::unordered_map<std::size_t, Stats> bigram_;
    std::unordered_map<std::uint64_t, Stats> trigram_;
};

struct PerplexityResult {
    double perplexity = 0.0;
    double total_nll = 0.0;
    std::size_t scored_tokens = 0;  // words plus one end marker per text
    std::string pooling = "token";
    nlohmann::ordered_json to_json() const;
};

// exp(total NLL / scored tokens) pooled over all texts.
PerplexityResult perplexity(const std::vector<std::string>& texts, const LanguageModel& lm);

// ---- transfer accuracy ----

class TextAttributeClassifier {
public:
    virtual ~TextAttributeClassifier() = default;
    virtual std::string name() const = 0;
    virtual double probability(const std::string& text, Group g) const = 0;
};

// Subspace-style classifier over mean-pooled token embeddings of a text.
class PooledEmbeddingClassifier : public TextAttributeClassifier {
public:
    PooledEmbeddingClassifier(std::shared_ptr<const EmbeddingBackend> backend, Tokenizer tokenizer,
                              SubspaceClassifier clf);
    static PooledEmbeddingClassifier train(const std::vector<std::string>& texts, const std::vector<Group>& groups,
                                           std::shared_ptr<const EmbeddingBackend> backend, Tokenizer tokenizer,
                                           const ClassifierTrainConfig& cfg);

    std::string name() const override { return "pooled-" + backend_->name(); }
    double probability(const std::string& text, Group g) const override;
    const SubspaceClassifier& classifier() const { return clf_; }

private:
    std::vector<double> pooled(const std::string& text) const;

    std::shared_ptr<const EmbeddingBackend> backend_;
    Tokenizer tokenizer_;
    SubspaceClassifier clf_;
};

// mean(1 - p) over the probabilities of the original attribute.
double transfer_accuracy(const std::vector<double>& p_original);
double transfer_accuracy(const std::vector<Group>& original_groups, const std::vector<std::string>& counterfactuals,
                         const TextAttributeClassifier& clf);

// ---- fairness ----

struct Ratio {
    std::uint64_t num = 0;
    std::uint64_t den = 1;
    double value() const { return static_cast<double>(num) / static_cast<double>(den); }
    friend bool operator==(const Ratio& a, const Ratio& b) { return a.num * b.den == b.num * a.den; }
};

struct ConfusionCounts {
    std::size_t tp = 0, fn = 0, fp = 0, tn = 0;
    std::size_t positives() const { return tp + fn; }
    std::size_t negatives() const { return fp + tn; }
    std::size_t total() const { return tp + fn + fp + tn; }
    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct FairnessReport {
    ConfusionCounts group_a, group_b;
    Ratio tpr_a, tpr_b, fpr_a, fpr_b;
    Ratio tprd, fprd;  // absolute differences
    double accuracy = 0.0;
    double f1 = 0.0;
    nlohmann::ordered_json to_json() const;
};

// Predictions and labels are 0/1. Throws UndefinedMetric naming the empty
// conditioning cell.
FairnessReport tprd_fprd(const std::vector<int>& predictions, const std::vector<int>& labels,
                         const std::vector<Group>& groups);

struct AccuracyF1 {
    double accuracy = 0.0;
    double f1 = 0.0;
    std::optional<std::string> warning;
};
AccuracyF1 accuracy_f1(const std::vector<int>& predictions, const std::vector<int>& labels);

struct PredictionSet {
    std::vector<int> predictions;
    std::vector<int> labels;
    std::vector<Group> groups;
};
// JSONL rows {"pred", "label", "group"}.
PredictionSet parse_predictions_jsonl(const std::string& text);

// ---- bias-induced sampling ----

struct BiasSampleSpec {
    std::size_t n = 0;
    double positive_fraction = 0.5;
    double female_in_positive_fraction = 0.5;
    // Defaults to 1 - female_in_positive_fraction, which keeps the overall
    // gender split balanced when positive_fraction is 0.5.
    std::optional<double> female_in_negative_fraction;
    std::uint64_t seed = 0;
};

struct CellCounts {
    std::size_t female_positive = 0, male_positive = 0, female_negative = 0, male_negative = 0;
    friend bool operator==(const CellCounts&, const CellCounts&) = default;
};

// Floor each cell and hand the remainder to the larger cell of the split.
CellCounts bias_cell_counts(const BiasSampleSpec& spec);

// Group a is read as female. Rows need a label (0/1) and a group.
std::vector<RawDocument> induce_bias_sample(const std::vector<RawDocument>& dataset, const BiasSampleSpec& spec);

CellCounts tally_cells(const std::vector<RawDocument>& docs);

}  // namespace fairflow
