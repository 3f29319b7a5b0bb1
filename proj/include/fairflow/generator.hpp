#pragma once

// Sequence-to-sequence counterfactual generator: a small pre-LN transformer
// encoder-decoder over word tokens, trained with teacher forcing and decoded
// greedily.

#include "fairflow/nn/graph.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace fairflow {

struct TextPair {
    std::string source;
    std::string target;
};

// Word-level tokens: whitespace-separated, punctuation split off, case kept.
std::vector<std::string> generator_tokens(const std::string& text);
std::string join_generator_tokens(const std::vector<std::string>& tokens);

class GeneratorVocabulary {
public:
    static constexpr std::size_t kUnk = 0;
    static constexpr std::size_t kBos = 1;
    static constexpr std::size_t kEos = 2;

    GeneratorVocabulary();
    static GeneratorVocabulary build(const std::vector<TextPair>& pairs, std::size_t min_count = 1);

    std::size_t size() const { return words_.size(); }
    const std::string& word(std::size_t id) const { return words_.at(id); }
    std::size_t id(const std::string& word) const;  // kUnk when absent
    const std::vector<std::string>& words() const { return words_; }

    // Unknown words map to kUnk and are counted in *oov.
    std::vector<std::size_t> encode(const std::string& text, std::size_t* oov = nullptr) const;
    // Stops at kEos; drops kBos.
    std::string decode(const std::vector<std::size_t>& ids) const;

    void add(const std::string& word);

private:
    std::vector<std::string> words_;
    std::map<std::string, std::size_t> ids_;
};

struct GeneratorArchitecture {
    std::size_t width = 128;
    std::size_t heads = 4;
    std::size_t encoder_layers = 2;
    std::size_t decoder_layers = 2;
    std::size_t ffn_multiplier = 2;
    std::size_t max_length = 128;
    std::uint64_t seed = 7;
};

struct GeneratorTrainConfig {
    std::size_t epochs = 60;
    std::size_t batch_size = 16;
    double learning_rate = 1e-3;
    double clip_norm = 1.0;
    double weight_decay = 0.0;
    std::uint64_t seed = 7;
};

class Seq2SeqModel {
public:
    Seq2SeqModel() = default;
    Seq2SeqModel(GeneratorVocabulary vocab, GeneratorArchitecture arch);

    const GeneratorVocabulary& vocabulary() const { return vocab_; }
    const GeneratorArchitecture& architecture() const { return arch_; }

    // -sum_t log P(y_t | y_<t, x) over the target tokens and the end token.
    double teacher_forcing_loss(const TextPair& pair, std::size_t* oov = nullptr) const;
    double teacher_forcing_loss(const std::vector<std::size_t>& src, const std::vector<std::size_t>& tgt) const;

    // Softmax rows for every decoder step under the gold prefix (|tgt| + 1 rows).
    std::vector<std::vector<double>> step_distributions(const std::vector<std::size_t>& src,
                                                        const std::vector<std::size_t>& tgt) const;

    // Greedy decoding; stops at the end token or after max_length tokens.
    std::string generate(const std::string& text) const;
    std::vector<std::size_t> generate_ids(const std::vector<std::size_t>& src) const;

    // Summed loss over a batch of encoded pairs, recorded on g.
    nn::Var batch_loss(nn::Graph& g, const std::vector<std::vector<std::size_t>>& srcs,
                       const std::vector<std::vector<std::size_t>>& tgts);
    std::vector<nn::Parameter*> parameters();
    std::size_t parameter_count() const;

    std::vector<double> loss_history;  // mean per-token loss per epoch, [0] at init
    std::size_t oov_tally = 0;          // unknown tokens seen while training
    std::uint64_t train_seed = 0;

    std::string serialize() const;
    static Seq2SeqModel deserialize(std::string bytes);
    void save(const std::filesystem::path& path) const;
    static Seq2SeqModel load(const std::filesystem::path& path);

private:
    struct Linear {
        nn::Parameter w, b;
    };
    struct Norm {
        nn::Parameter gamma, beta;
    };
    struct Attention {
        Linear q, k, v, o;
    };
    struct FeedForward {
        Linear in, out;
    };
    struct EncoderLayer {
        Norm n1, n2;
        Attention self;
        FeedForward ffn;
    };
    struct DecoderLayer {
        Norm n1, n2, n3;
        Attention self, cross;
        FeedForward ffn;
    };

    std::vector<std::size_t> clip_source(const std::vector<std::size_t>& src) const;
    nn::Var embed(nn::Graph& g, const std::vector<std::size_t>& ids, const std::vector<nn::Segment>& segs);
    nn::Var encode(nn::Graph& g, const std::vector<std::size_t>& ids, const std::vector<nn::Segment>& segs);
    nn::Var decode(nn::Graph& g, nn::Var memory, const std::vector<nn::Segment>& mem_segs,
                   const std::vector<std::size_t>& ids, const std::vector<nn::Segment>& segs);
    Matrix logits(const std::vector<std::size_t>& src, const std::vector<std::size_t>& dec_in) const;
    void init_parameters();
    template <class Fn>
    void for_each_parameter(Fn&& fn);

    GeneratorVocabulary vocab_;
    GeneratorArchitecture arch_;
    nn::Parameter embedding_;
    std::vector<EncoderLayer> encoder_;
    std::vector<DecoderLayer> decoder_;
    Norm encoder_norm_, decoder_norm_;
    Linear output_;
};

// Builds a vocabulary from the pairs and an untrained model.
Seq2SeqModel make_generator(const std::vector<TextPair>& pairs, GeneratorArchitecture arch = {});

// Trains on the pairs with Adam on mean per-token loss. Throws
// PreconditionError on an empty corpus or over-long pairs and DivergenceError
// on a non-finite loss.
Seq2SeqModel finetune(Seq2SeqModel model, const std::vector<TextPair>& pairs, const GeneratorTrainConfig& cfg);

double exact_match(const Seq2SeqModel& model, const std::vector<TextPair>& pairs);

}  // namespace fairflow
