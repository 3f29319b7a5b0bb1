#pragma once

// Attribute subspace approximation: a one-hidden-layer GELU classifier trained
// on contextual embeddings of a prompt word pair, then used to discover the
// other words that carry the attribute.

#include "fairflow/corpus.hpp"
#include "fairflow/embedding.hpp"
#include "fairflow/kernels.hpp"
#include "fairflow/matrix.hpp"
#include "fairflow/nn/graph.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace fairflow {

struct PromptPair {
    std::string word_a;
    std::string word_b;

    PromptPair() = default;
    PromptPair(std::string a, std::string b);  // validates and case-folds
};

struct LabeledEmbeddingSet {
    Group label = Group::a;
    std::vector<ContextualEmbedding> embeddings;

    std::size_t dim() const { return embeddings.empty() ? 0 : embeddings.front().vector.size(); }
};

struct ClassifierTrainConfig {
    std::size_t max_epochs = 300;
    std::size_t batch_size = 64;
    double learning_rate = 5e-3;
    double weight_decay = 1e-4;
    double holdout_fraction = 0.2;
    std::size_t patience = 30;
    std::uint64_t seed = 13;
    std::size_t hidden = 0;  // 0: max(64, d/4)
};

struct ClassifierMeta {
    std::uint64_t seed = 0;
    std::size_t epochs = 0;
    double held_out_accuracy = 0.0;
};

class SubspaceClassifier {
public:
    SubspaceClassifier() = default;
    SubspaceClassifier(std::size_t input_dim, std::size_t hidden, std::uint64_t seed);

    std::size_t input_dim() const { return input_dim_; }
    std::size_t hidden() const { return hidden_; }
    const ClassifierMeta& meta() const { return meta_; }
    ClassifierMeta& meta() { return meta_; }

    // (P(a), P(b)); throws DimensionMismatch.
    std::pair<double, double> classify(std::span<const double> z) const;
    std::pair<double, double> classify(const ContextualEmbedding& z) const { return classify(z.vector); }
    Group predict(std::span<const double> z) const;

    // Logits for a batch of rows, recorded on `g`.
    nn::Var logits(nn::Graph& g, nn::Var x);
    std::vector<nn::Parameter*> parameters();

    std::string serialize() const;
    static SubspaceClassifier deserialize(std::string bytes);
    void save(const std::filesystem::path& path) const;
    static SubspaceClassifier load(const std::filesystem::path& path);

private:
    std::size_t input_dim_ = 0;
    std::size_t hidden_ = 0;
    nn::Parameter w1_, b1_, w2_, b2_;
    ClassifierMeta meta_;
};

std::size_t default_hidden_width(std::size_t input_dim);

// Trains on rows labelled a (x_a) and b (x_b). Exposed for callers that hold
// plain vectors (e.g. pooled document embeddings).
SubspaceClassifier train_binary_classifier(const std::vector<std::vector<double>>& x_a,
                                           const std::vector<std::vector<double>>& x_b,
                                           const ClassifierTrainConfig& config);

SubspaceClassifier train_subspace_classifier(const LabeledEmbeddingSet& set_a,
                                             const LabeledEmbeddingSet& set_b,
                                             const ClassifierTrainConfig& config);

struct DiscoveryConfig {
    double threshold_phi = 0.95;
    std::size_t min_instance_count = 1;
    std::size_t instance_cap = 256;
    std::size_t context_window = kDefaultContextWindow;
};

void validate(const DiscoveryConfig& cfg);

std::pair<LabeledEmbeddingSet, LabeledEmbeddingSet> collect_prompt_embeddings(
    const TokenizedCorpus& corpus, const EmbeddingBackend& backend, const PromptPair& prompt,
    const DiscoveryConfig& cfg = {});

// Capped contextual embeddings of every single-subtoken word, keyed by
// case-folded word. Instances are the first `instance_cap` in corpus order.
using VocabularyEmbeddings = std::map<std::string, std::vector<ContextualEmbedding>>;

VocabularyEmbeddings embed_vocabulary(const TokenizedCorpus& corpus, const EmbeddingBackend& backend,
                                      const DiscoveryConfig& cfg,
                                      kernels::Exec exec = kernels::Exec::parallel);

struct WordScore {
    std::string word;
    double max_prob_a = 0.0;
    double max_prob_b = 0.0;
    std::size_t instance_count = 0;
};

std::vector<WordScore> score_words(const SubspaceClassifier& h, const VocabularyEmbeddings& vocab,
                                   kernels::Exec exec = kernels::Exec::parallel);

struct DiscoveryResult {
    std::set<std::string> set_a;
    std::set<std::string> set_b;
    std::vector<WordScore> scores;

    // TSV rows: word, side, max_probability, instance_count.
    std::string report_tsv() const;
};

// Thresholds precomputed scores. Prompt words join their sets when the
// classifier's held-out accuracy exceeds phi.
DiscoveryResult select_attribute_words(std::vector<WordScore> scores, const DiscoveryConfig& cfg,
                                       const PromptPair* prompt = nullptr,
                                       double held_out_accuracy = 0.0);

DiscoveryResult discover_attribute_words(const TokenizedCorpus& corpus,
                                         const EmbeddingBackend& backend,
                                         const SubspaceClassifier& h, const DiscoveryConfig& cfg,
                                         const PromptPair* prompt = nullptr);

}  // namespace fairflow
