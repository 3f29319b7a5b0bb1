#pragma once

// Disentangling invertible flow. T maps an embedding z to an interpretable
// vector z~ whose first k dimensions (the attribute block K) carry the
// demographic attribute; swapping K for the other group's prototype and
// inverting yields a counterfactual embedding.

#include "fairflow/corpus.hpp"
#include "fairflow/kernels.hpp"
#include "fairflow/matrix.hpp"
#include "fairflow/nn/graph.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fairflow {

struct FlowArchitecture {
    std::size_t dim = 0;
    std::size_t depth = 6;
    std::size_t width = 0;  // coupling-net hidden width, 0: 2 * dim
    double scale_bound = 2.0;
    std::uint64_t seed = 17;
};

struct FlowForward {
    std::vector<double> z_tilde;
    double log_det = 0.0;
};

struct FlowTrainConfig {
    double sigma = 0.9;
    std::size_t epochs = 200;
    std::size_t batch_size = 64;
    double learning_rate = 1e-2;
    double clip_norm = 10.0;
    // Std of Gaussian noise added to every training batch, redrawn each time.
    double noise_std = 0.0;
    std::uint64_t seed = 17;
};

void validate(const FlowTrainConfig& cfg);

// One affine coupling block. Columns are gathered through a fixed random
// permutation, the first `split` permuted columns condition an affine map of
// the rest, and the result is scattered back through the same permutation.
struct CouplingBlock {
    std::vector<std::size_t> perm;
    std::vector<std::size_t> inverse_perm;
    std::size_t split = 0;
    nn::Parameter w1, b1, w2, b2;
};

class FlowModel {
public:
    FlowModel() = default;
    // Coupling nets end in zero-initialised layers, so a new model is the identity.
    FlowModel(const FlowArchitecture& arch, std::size_t k);

    std::size_t dim() const { return arch_.dim; }
    std::size_t k() const { return k_; }
    std::size_t depth() const { return blocks_.size(); }
    const FlowArchitecture& architecture() const { return arch_; }
    void set_k(std::size_t k);

    // Throws DimensionMismatch or NumericError (naming the block index).
    FlowForward forward(std::span<const double> z) const;
    std::vector<double> inverse(std::span<const double> z_tilde) const;
    // log p(z) = log N(T(z); 0, I) + log|det dT/dz|
    double log_likelihood(std::span<const double> z) const;

    struct BatchOutput {
        nn::Var z_tilde;  // n x d
        nn::Var log_det;  // n x 1
    };
    BatchOutput forward(nn::Graph& g, nn::Var x);
    std::vector<nn::Parameter*> parameters();

    const std::optional<std::vector<double>>& prototype(Group g) const {
        return g == Group::a ? prototype_a_ : prototype_b_;
    }
    void set_prototypes(std::vector<double> a, std::vector<double> b);
    bool has_prototypes() const { return prototype_a_.has_value() && prototype_b_.has_value(); }

    // Training record.
    std::string k_rule = "user";
    double sigma = 0.0;
    std::vector<double> loss_history;  // [0] = loss at initialisation, then per-epoch means

    std::string serialize() const;
    static FlowModel deserialize(std::string bytes);
    void save(const std::filesystem::path& path) const;
    static FlowModel load(const std::filesystem::path& path);

private:
    FlowArchitecture arch_;
    std::size_t k_ = 1;
    std::vector<CouplingBlock> blocks_;
    std::optional<std::vector<double>> prototype_a_;
    std::optional<std::vector<double>> prototype_b_;
};

double log_standard_normal(std::span<const double> x);

// ||t2_K - sigma * t1_K||^2 / (1 - sigma^2)
double correlation_penalty(std::span<const double> t1_k, std::span<const double> t2_k, double sigma);

// Pair objective for embeddings sharing the attribute:
//   ||T(z1)||^2 - log|det J(z1)| + ||T(z2)_{D\K}||^2 - log|det J(z2)|
//   + ||T(z2)_K - sigma T(z1)_K||^2 / (1 - sigma^2)
double pair_loss(const FlowModel& t, std::span<const double> z1, std::span<const double> z2, double sigma);
// Mean pair objective over the rows of z1/z2, recorded on `g`.
nn::Var pair_loss(nn::Graph& g, FlowModel& t, const Matrix& z1, const Matrix& z2, double sigma);
// Mean negative log-likelihood over rows, recorded on `g`.
nn::Var nll_loss(nn::Graph& g, FlowModel& t, const Matrix& z);

struct LabeledVectors {
    std::vector<std::vector<double>> vectors;
    std::vector<Group> groups;

    void add(std::vector<double> v, Group g) {
        vectors.push_back(std::move(v));
        groups.push_back(g);
    }
    std::size_t dim() const { return vectors.empty() ? 0 : vectors.front().size(); }
};

// Fits T on random same-group pairs with the pair objective, then sets the
// per-group prototypes as instance means of the first k interpretable dims.
FlowModel train_flow(const LabeledVectors& data, std::size_t k, const FlowArchitecture& arch,
                     const FlowTrainConfig& cfg);

// Plain maximum-likelihood fit of T.
FlowModel train_density(const std::vector<std::vector<double>>& data, const FlowArchitecture& arch,
                        const FlowTrainConfig& cfg);

void fit_prototypes(FlowModel& t, const LabeledVectors& data);

struct KEstimate {
    std::size_t k = 1;
    std::vector<double> ratios;  // between/within variance ratio per interpretable dim
    double threshold = 2.0;
};

// Trains a preliminary flow (attribute block of half the dimensions), scores
// every interpretable dimension by its between-group / within-group variance
// ratio and counts the dimensions above `threshold` (floor 1, cap d-1).
KEstimate estimate_k(const LabeledVectors& data, const FlowArchitecture& arch,
                     const FlowTrainConfig& cfg, double threshold = 2.0);

std::vector<double> variance_ratios(const std::vector<std::vector<double>>& rows,
                                    const std::vector<Group>& groups);

// Replaces the first k entries of z_tilde with `prototype`.
std::vector<double> swap_attribute_block(std::span<const double> z_tilde,
                                         std::span<const double> prototype);

// inverse(swap(forward(z), prototype(target)))
std::vector<double> counterfactual_embedding(const FlowModel& t, std::span<const double> z, Group target);

// Mean contextual embedding per word, rows sorted by word.
struct VocabularyTable {
    std::vector<std::string> words;
    Matrix vectors;
    std::vector<double> norms;

    std::size_t dim() const { return vectors.cols(); }
};

std::string decode_word(const VocabularyTable& table, std::span<const double> z,
                        kernels::Exec exec = kernels::Exec::parallel);

struct WordPairCandidate {
    std::string word;
    Group side = Group::a;  // group the source word was discovered in
    std::string counterfactual;
    std::size_t votes = 0;
    std::size_t total = 0;
};

// Most frequent entry; ties go to the lexicographically smaller word.
std::pair<std::string, std::size_t> majority_vote(const std::vector<std::string>& decoded);

}  // namespace fairflow
