#pragma once

#include "fairflow/corpus.hpp"
#include "fairflow/matrix.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace fairflow {

struct ContextualEmbedding {
    Occurrence occurrence;
    std::vector<double> vector;
    bool truncated = false;  // context window was cut to the backend maximum
};

// Maps a word in context to a fixed-dimension vector. Implementations must be
// safe to call concurrently.
class EmbeddingBackend {
public:
    virtual ~EmbeddingBackend() = default;

    virtual std::string name() const = 0;
    virtual std::size_t dim() const = 0;
    virtual bool deterministic() const = 0;
    virtual std::size_t max_length() const = 0;
    // context is case-folded; context[center] is the word being embedded.
    virtual std::vector<double> encode(std::span<const std::string> context,
                                       std::size_t center) const = 0;

    ContextualEmbedding embed(const Occurrence& occ) const;
};

// Words with a planted attribute signal. Words sharing an anchor share their
// semantic base vector and differ only in the sign of the attribute direction.
struct AttributeLexicon {
    struct Entry {
        Group group = Group::a;
        std::string anchor;
    };
    std::map<std::string, Entry> entries;

    void add(std::string word, Group group, std::string anchor);
    // TSV: word<TAB>group<TAB>anchor
    static AttributeLexicon load(const std::filesystem::path& path);
};

struct ToyBackendConfig {
    std::size_t dim = 32;
    std::uint64_t seed = 7;
    double attribute_strength = 1.0;
    double context_weight = 0.35;
    std::size_t max_length = 512;
};

// Hermetic deterministic backend: a hash-seeded static word vector plus a fixed,
// distance-weighted mixture of the context word vectors.
class ToyBackend : public EmbeddingBackend {
public:
    ToyBackend(ToyBackendConfig config, AttributeLexicon lexicon = {});

    std::string name() const override { return "toy"; }
    std::size_t dim() const override { return config_.dim; }
    bool deterministic() const override { return true; }
    std::size_t max_length() const override { return config_.max_length; }
    std::vector<double> encode(std::span<const std::string> context,
                               std::size_t center) const override;

    std::vector<double> word_vector(const std::string& word) const;
    const std::vector<double>& attribute_direction() const { return attribute_direction_; }
    const ToyBackendConfig& config() const { return config_; }

private:
    std::vector<double> seeded_vector(const std::string& key) const;

    ToyBackendConfig config_;
    AttributeLexicon lexicon_;
    std::vector<double> attribute_direction_;
};

// Static word vectors from a text file ("word v1 ... vd" per line),
// contextualised with the same mixture as the toy backend. Unknown words map
// to the zero vector.
class StaticVectorsBackend : public EmbeddingBackend {
public:
    StaticVectorsBackend(const std::filesystem::path& path, double context_weight = 0.35,
                         std::size_t max_length = 512);

    std::string name() const override { return name_; }
    std::size_t dim() const override { return dim_; }
    bool deterministic() const override { return true; }
    std::size_t max_length() const override { return max_length_; }
    std::vector<double> encode(std::span<const std::string> context,
                               std::size_t center) const override;

private:
    std::string name_;
    std::size_t dim_ = 0;
    double context_weight_;
    std::size_t max_length_;
    std::map<std::string, std::vector<double>, std::less<>> vectors_;
};

// "toy" or "pretrained:<vectors file>".
std::unique_ptr<EmbeddingBackend> make_embedding_backend(const std::string& spec,
                                                         const ToyBackendConfig& toy,
                                                         const AttributeLexicon& lexicon);

// Mean of the contextual embeddings of every token in a document.
std::vector<double> pooled_embedding(const EmbeddingBackend& backend, const TokenizedCorpus& corpus,
                                     std::size_t doc_index);

std::uint64_t fnv1a64(std::string_view s);

// On-disk cache of contextual embeddings keyed by (doc_id, token_index).
struct EmbeddingCache {
    struct Record {
        std::string doc_id;
        std::uint32_t token_index = 0;
        std::uint32_t flags = 0;  // bit 0: truncated
        std::vector<double> vector;
    };

    std::string backend;
    std::size_t dim = 0;
    std::vector<Record> records;

    static constexpr std::uint32_t kVersion = 1;
    static constexpr std::size_t kDocIdWidth = 64;

    std::string serialize() const;
    static EmbeddingCache deserialize(std::string bytes);
    void save(const std::filesystem::path& path) const;
    static EmbeddingCache load(const std::filesystem::path& path);
};

}  // namespace fairflow
