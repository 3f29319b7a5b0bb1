#include "fairflow/subspace.hpp"

#include "fairflow/errors.hpp"
#include "fairflow/io.hpp"
#include "fairflow/nn/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace fairflow {

namespace {

constexpr char kClassifierMagic[] = "FFCLSF";
constexpr std::uint32_t kClassifierVersion = 1;

Matrix random_matrix(std::size_t r, std::size_t c, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, stddev);
    Matrix m(r, c);
    for (double& x : m.data()) x = normal(rng);
    return m;
}

std::pair<double, double> softmax2(double l0, double l1) {
    const double mx = std::max(l0, l1);
    const double e0 = std::exp(l0 - mx);
    const double e1 = std::exp(l1 - mx);
    const double pa = e0 / (e0 + e1);
    return {pa, 1.0 - pa};
}

}  // namespace

PromptPair::PromptPair(std::string a, std::string b)
    : word_a(case_fold(a)), word_b(case_fold(b)) {
    if (word_a.empty() || word_b.empty()) throw PreconditionError("prompt words must be non-empty");
    if (word_a == word_b) throw PreconditionError("prompt words must differ: '" + word_a + "'");
}

std::size_t default_hidden_width(std::size_t input_dim) { return std::max<std::size_t>(64, input_dim / 4); }

SubspaceClassifier::SubspaceClassifier(std::size_t input_dim, std::size_t hidden, std::uint64_t seed)
    : input_dim_(input_dim), hidden_(hidden) {
    std::mt19937_64 rng(seed);
    w1_ = nn::Parameter("w1", random_matrix(input_dim, hidden, 1.0 / std::sqrt(double(input_dim)), rng));
    b1_ = nn::Parameter("b1", Matrix(1, hidden));
    w2_ = nn::Parameter("w2", random_matrix(hidden, 2, 1.0 / std::sqrt(double(hidden)), rng));
    b2_ = nn::Parameter("b2", Matrix(1, 2));
    meta_.seed = seed;
}

std::pair<double, double> SubspaceClassifier::classify(std::span<const double> z) const {
    if (z.size() != input_dim_) throw DimensionMismatch(input_dim_, z.size());
    std::vector<double> hid(hidden_);
    const Matrix& w1 = w1_.value;
    for (std::size_t j = 0; j < hidden_; ++j) hid[j] = b1_.value(0, j);
    for (std::size_t i = 0; i < input_dim_; ++i) {
        const double zi = z[i];
        for (std::size_t j = 0; j < hidden_; ++j) hid[j] += zi * w1(i, j);
    }
    double l0 = b2_.value(0, 0);
    double l1 = b2_.value(0, 1);
    for (std::size_t j = 0; j < hidden_; ++j) {
        const double hj = nn::gelu_value(hid[j]);
        l0 += hj * w2_.value(j, 0);
        l1 += hj * w2_.value(j, 1);
    }
    return softmax2(l0, l1);
}

Group SubspaceClassifier::predict(std::span<const double> z) const {
    auto [pa, pb] = classify(z);
    return pa >= pb ? Group::a : Group::b;
}

nn::Var SubspaceClassifier::logits(nn::Graph& g, nn::Var x) {
    auto h = g.gelu(g.add_row(g.matmul(x, g.param(w1_)), g.param(b1_)));
    return g.add_row(g.matmul(h, g.param(w2_)), g.param(b2_));
}

std::vector<nn::Parameter*> SubspaceClassifier::parameters() { return {&w1_, &b1_, &w2_, &b2_}; }

std::string SubspaceClassifier::serialize() const {
    io::BinaryWriter w;
    w.raw(kClassifierMagic, sizeof kClassifierMagic - 1);
    w.u32(kClassifierVersion);
    w.u64(input_dim_);
    w.u64(hidden_);
    w.u64(meta_.seed);
    w.u64(meta_.epochs);
    w.f64(meta_.held_out_accuracy);
    for (const auto* p : {&w1_, &b1_, &w2_, &b2_}) w.matrix(p->value);
    return w.bytes();
}

SubspaceClassifier SubspaceClassifier::deserialize(std::string bytes) {
    io::BinaryReader r(std::move(bytes));
    r.expect_magic(std::string_view(kClassifierMagic, sizeof kClassifierMagic - 1));
    if (r.u32() != kClassifierVersion) throw Error("unsupported classifier checkpoint version");
    SubspaceClassifier c;
    c.input_dim_ = r.u64();
    c.hidden_ = r.u64();
    c.meta_.seed = r.u64();
    c.meta_.epochs = r.u64();
    c.meta_.held_out_accuracy = r.f64();
    c.w1_ = nn::Parameter("w1", r.matrix());
    c.b1_ = nn::Parameter("b1", r.matrix());
    c.w2_ = nn::Parameter("w2", r.matrix());
    c.b2_ = nn::Parameter("b2", r.matrix());
    if (c.w1_.value.rows() != c.input_dim_ || c.w1_.value.cols() != c.hidden_ ||
        c.w2_.value.rows() != c.hidden_ || c.w2_.value.cols() != 2) {
        throw Error("classifier checkpoint shapes do not match header");
    }
    return c;
}

void SubspaceClassifier::save(const std::filesystem::path& path) const {
    io::write_file_atomic(path, serialize());
}

SubspaceClassifier SubspaceClassifier::load(const std::filesystem::path& path) {
    return deserialize(io::read_file(path));
}

SubspaceClassifier train_binary_classifier(const std::vector<std::vector<double>>& x_a,
                                           const std::vector<std::vector<double>>& x_b,
                                           const ClassifierTrainConfig& config) {
    if (x_a.empty() || x_b.empty()) throw PreconditionError("both classes need at least one example");
    const std::size_t d = x_a.front().size();
    for (const auto* set : {&x_a, &x_b}) {
        for (const auto& v : *set) {
            if (v.size() != d) throw DimensionMismatch(d, v.size());
        }
    }
    std::mt19937_64 rng(config.seed);

    // Downsample the larger class, then hold out a stratified fraction.
    const std::size_t n_per_class = std::min(x_a.size(), x_b.size());
    struct Example {
        const std::vector<double>* x;
        std::size_t y;
    };
    std::vector<Example> train, held;
    for (std::size_t cls = 0; cls < 2; ++cls) {
        const auto& src = cls == 0 ? x_a : x_b;
        std::vector<std::size_t> idx(src.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(n_per_class);
        std::size_t n_hold = static_cast<std::size_t>(std::llround(config.holdout_fraction * double(n_per_class)));
        if (n_per_class < 2) n_hold = 0;
        n_hold = std::min(n_hold, n_per_class - 1);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            (i < n_hold ? held : train).push_back({&src[idx[i]], cls});
        }
    }
    const std::vector<Example>& eval_set = held.empty() ? train : held;

    SubspaceClassifier model(d, config.hidden ? config.hidden : default_hidden_width(d), config.seed);
    nn::AdamConfig adam_cfg;
    adam_cfg.learning_rate = config.learning_rate;
    adam_cfg.weight_decay = config.weight_decay;
    nn::Adam opt(model.parameters(), adam_cfg);

    auto evaluate = [&](const SubspaceClassifier& m) {
        double loss = 0.0;
        std::size_t correct = 0;
        for (const auto& ex : eval_set) {
            auto [pa, pb] = m.classify(*ex.x);
            const double p = ex.y == 0 ? pa : pb;
            loss -= std::log(std::max(p, 1e-300));
            if ((pa >= pb) == (ex.y == 0)) ++correct;
        }
        return std::pair{loss / double(eval_set.size()), double(correct) / double(eval_set.size())};
    };

    SubspaceClassifier best = model;
    auto [best_loss, best_acc] = evaluate(model);
    std::size_t since_best = 0;
    std::size_t epochs_run = 0;
    const std::size_t batch = std::max<std::size_t>(1, config.batch_size);
    for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
        std::shuffle(train.begin(), train.end(), rng);
        for (std::size_t start = 0; start < train.size(); start += batch) {
            const std::size_t end = std::min(train.size(), start + batch);
            Matrix x(end - start, d);
            std::vector<std::size_t> y(end - start);
            for (std::size_t i = start; i < end; ++i) {
                std::copy(train[i].x->begin(), train[i].x->end(), x.row(i - start).begin());
                y[i - start] = train[i].y;
            }
            opt.zero_grad();
            nn::Graph g;
            auto loss = g.scale(g.cross_entropy(model.logits(g, g.input(std::move(x))), y),
                                1.0 / double(end - start));
            if (!std::isfinite(g.value(loss)(0, 0))) throw DivergenceError("classifier training", epoch);
            g.backward(loss);
            opt.step();
        }
        epochs_run = epoch + 1;
        auto [loss, acc] = evaluate(model);
        if (!std::isfinite(loss)) throw DivergenceError("classifier training", epoch);
        if (loss < best_loss) {
            best_loss = loss;
            best_acc = acc;
            best = model;
            since_best = 0;
        } else if (++since_best >= config.patience) {
            break;
        }
    }
    best.meta().seed = config.seed;
    best.meta().epochs = epochs_run;
    best.meta().held_out_accuracy = best_acc;
    return best;
}

SubspaceClassifier train_subspace_classifier(const LabeledEmbeddingSet& set_a,
                                             const LabeledEmbeddingSet& set_b,
                                             const ClassifierTrainConfig& config) {
    if (set_a.embeddings.empty() || set_b.embeddings.empty()) {
        throw PreconditionError("training sets must be non-empty");
    }
    if (set_a.dim() != set_b.dim()) throw DimensionMismatch(set_a.dim(), set_b.dim());
    std::vector<std::vector<double>> xa, xb;
    for (const auto& e : set_a.embeddings) xa.push_back(e.vector);
    for (const auto& e : set_b.embeddings) xb.push_back(e.vector);
    return train_binary_classifier(xa, xb, config);
}

void validate(const DiscoveryConfig& cfg) {
    if (!(cfg.threshold_phi > 0.0 && cfg.threshold_phi <= 1.0)) {
        throw PreconditionError("threshold phi must lie in (0, 1]");
    }
    if (cfg.min_instance_count < 1) throw PreconditionError("min_instance_count must be >= 1");
}

std::pair<LabeledEmbeddingSet, LabeledEmbeddingSet> collect_prompt_embeddings(
    const TokenizedCorpus& corpus, const EmbeddingBackend& backend, const PromptPair& prompt,
    const DiscoveryConfig& cfg) {
    validate(cfg);
    if (prompt.word_a == prompt.word_b) throw PreconditionError("prompt words must differ");
    auto collect = [&](const std::string& word, Group label) {
        const auto occs = find_occurrences(corpus, word, cfg.context_window);
        if (occs.size() < cfg.min_instance_count) {
            throw InsufficientOccurrences(word, occs.size(), cfg.min_instance_count);
        }
        LabeledEmbeddingSet set;
        set.label = label;
        for (const auto& o : occs) set.embeddings.push_back(backend.embed(o));
        return set;
    };
    return {collect(prompt.word_a, Group::a), collect(prompt.word_b, Group::b)};
}

VocabularyEmbeddings embed_vocabulary(const TokenizedCorpus& corpus, const EmbeddingBackend& backend,
                                      const DiscoveryConfig& cfg, kernels::Exec exec) {
    const auto index = index_words(corpus);
    std::vector<std::pair<std::string, const std::vector<TokenRef>*>> words;
    for (const auto& [word, refs] : index) {
        const TokenRef first = refs.front();
        const Token& tok = corpus.documents[first.doc_index].tokens[first.token_index];
        if (tok.subtoken_count() != 1) continue;
        if (refs.size() < cfg.min_instance_count) continue;
        words.emplace_back(word, &refs);
    }
    std::vector<std::vector<ContextualEmbedding>> out(words.size());
    kernels::parallel_for(
        words.size(),
        [&](std::size_t i) {
            const auto& refs = *words[i].second;
            const std::size_t n = std::min(refs.size(), cfg.instance_cap);
            out[i].reserve(n);
            for (std::size_t k = 0; k < n; ++k) {
                out[i].push_back(backend.embed(
                    make_occurrence(corpus, refs[k].doc_index, refs[k].token_index, cfg.context_window)));
            }
        },
        exec);
    VocabularyEmbeddings vocab;
    for (std::size_t i = 0; i < words.size(); ++i) vocab.emplace(words[i].first, std::move(out[i]));
    return vocab;
}

std::vector<WordScore> score_words(const SubspaceClassifier& h, const VocabularyEmbeddings& vocab,
                                   kernels::Exec exec) {
    std::vector<const std::pair<const std::string, std::vector<ContextualEmbedding>>*> items;
    for (const auto& kv : vocab) items.push_back(&kv);
    std::vector<WordScore> scores(items.size());
    kernels::parallel_for(
        items.size(),
        [&](std::size_t i) {
            WordScore s;
            s.word = items[i]->first;
            s.instance_count = items[i]->second.size();
            for (const auto& e : items[i]->second) {
                auto [pa, pb] = h.classify(e.vector);
                s.max_prob_a = std::max(s.max_prob_a, pa);
                s.max_prob_b = std::max(s.max_prob_b, pb);
            }
            scores[i] = std::move(s);
        },
        exec);
    return scores;
}

DiscoveryResult select_attribute_words(std::vector<WordScore> scores, const DiscoveryConfig& cfg,
                                       const PromptPair* prompt, double held_out_accuracy) {
    validate(cfg);
    DiscoveryResult res;
    for (const auto& s : scores) {
        if (s.max_prob_a > cfg.threshold_phi) res.set_a.insert(s.word);
        if (s.max_prob_b > cfg.threshold_phi) res.set_b.insert(s.word);
    }
    if (prompt && held_out_accuracy > cfg.threshold_phi) {
        res.set_a.insert(prompt->word_a);
        res.set_b.insert(prompt->word_b);
    }
    res.scores = std::move(scores);
    return res;
}

DiscoveryResult discover_attribute_words(const TokenizedCorpus& corpus,
                                         const EmbeddingBackend& backend,
                                         const SubspaceClassifier& h, const DiscoveryConfig& cfg,
                                         const PromptPair* prompt) {
    validate(cfg);
    if (backend.dim() != h.input_dim()) throw DimensionMismatch(h.input_dim(), backend.dim());
    const auto vocab = embed_vocabulary(corpus, backend, cfg);
    return select_attribute_words(score_words(h, vocab), cfg, prompt, h.meta().held_out_accuracy);
}

std::string DiscoveryResult::report_tsv() const {
    std::ostringstream out;
    out.precision(17);
    out << "word\tside\tmax_probability\tinstance_count\n";
    for (const auto& s : scores) {
        if (set_a.contains(s.word)) out << s.word << "\ta\t" << s.max_prob_a << '\t' << s.instance_count << '\n';
        if (set_b.contains(s.word)) out << s.word << "\tb\t" << s.max_prob_b << '\t' << s.instance_count << '\n';
    }
    return out.str();
}

}  // namespace fairflow
