#include "fairflow/generator.hpp"

#include "fairflow/errors.hpp"
#include "fairflow/io.hpp"
#include "fairflow/nn/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace fairflow {

namespace {

constexpr char kGeneratorMagic[] = "FFGEN1";
constexpr std::uint32_t kGeneratorVersion = 1;

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }
bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

Matrix sinusoidal(const std::vector<nn::Segment>& segs, std::size_t rows, std::size_t width) {
    Matrix m(rows, width);
    for (const auto& s : segs) {
        for (std::size_t p = 0; p < s.length; ++p) {
            for (std::size_t i = 0; i < width; i += 2) {
                const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(width));
                m(s.offset + p, i) = std::sin(static_cast<double>(p) * freq);
                if (i + 1 < width) m(s.offset + p, i + 1) = std::cos(static_cast<double>(p) * freq);
            }
        }
    }
    return m;
}

std::vector<nn::Segment> segments_of(const std::vector<std::vector<std::size_t>>& seqs, std::size_t extra) {
    std::vector<nn::Segment> segs;
    std::size_t off = 0;
    for (const auto& s : seqs) {
        segs.push_back({off, s.size() + extra});
        off += s.size() + extra;
    }
    return segs;
}

std::vector<double> softmax_row(std::span<const double> row) {
    const double mx = *std::ranges::max_element(row);
    std::vector<double> p(row.size());
    double z = 0.0;
    for (std::size_t i = 0; i < row.size(); ++i) z += (p[i] = std::exp(row[i] - mx));
    for (double& x : p) x /= z;
    return p;
}

}  // namespace

std::vector<std::string> generator_tokens(const std::string& text) {
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

std::string join_generator_tokens(const std::vector<std::string>& tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += tokens[i];
    }
    return out;
}

// ---- vocabulary ----

GeneratorVocabulary::GeneratorVocabulary() {
    add("<unk>");
    add("<bos>");
    add("<eos>");
}

void GeneratorVocabulary::add(const std::string& word) {
    if (ids_.contains(word)) return;
    ids_.emplace(word, words_.size());
    words_.push_back(word);
}

GeneratorVocabulary GeneratorVocabulary::build(const std::vector<TextPair>& pairs, std::size_t min_count) {
    std::map<std::string, std::size_t> counts;
    for (const auto& p : pairs) {
        for (const auto& w : generator_tokens(p.source)) ++counts[w];
        for (const auto& w : generator_tokens(p.target)) ++counts[w];
    }
    GeneratorVocabulary v;
    for (const auto& [w, c] : counts) {
        if (c >= min_count) v.add(w);
    }
    return v;
}

std::size_t GeneratorVocabulary::id(const std::string& word) const {
    auto it = ids_.find(word);
    return it == ids_.end() ? kUnk : it->second;
}

std::vector<std::size_t> GeneratorVocabulary::encode(const std::string& text, std::size_t* oov) const {
    std::vector<std::size_t> ids;
    for (const auto& w : generator_tokens(text)) {
        const std::size_t i = id(w);
        if (i == kUnk && oov) ++*oov;
        ids.push_back(i);
    }
    return ids;
}

std::string GeneratorVocabulary::decode(const std::vector<std::size_t>& ids) const {
    std::vector<std::string> words;
    for (std::size_t i : ids) {
        if (i == kEos) break;
        if (i == kBos) continue;
        words.push_back(word(i));
    }
    return join_generator_tokens(words);
}

// ---- model ----

Seq2SeqModel::Seq2SeqModel(GeneratorVocabulary vocab, GeneratorArchitecture arch)
    : vocab_(std::move(vocab)), arch_(arch) {
    if (arch_.width == 0 || arch_.heads == 0 || arch_.width % arch_.heads != 0) {
        throw PreconditionError("generator width must be a positive multiple of the head count");
    }
    if (arch_.max_length == 0) throw PreconditionError("generator max_length must be positive");
    init_parameters();
}

template <class Fn>
void Seq2SeqModel::for_each_parameter(Fn&& fn) {
    auto lin = [&](Linear& l) {
        fn(l.w);
        fn(l.b);
    };
    auto norm = [&](Norm& n) {
        fn(n.gamma);
        fn(n.beta);
    };
    auto attn = [&](Attention& a) {
        lin(a.q);
        lin(a.k);
        lin(a.v);
        lin(a.o);
    };
    fn(embedding_);
    for (auto& l : encoder_) {
        norm(l.n1);
        attn(l.self);
        norm(l.n2);
        lin(l.ffn.in);
        lin(l.ffn.out);
    }
    for (auto& l : decoder_) {
        norm(l.n1);
        attn(l.self);
        norm(l.n2);
        attn(l.cross);
        norm(l.n3);
        lin(l.ffn.in);
        lin(l.ffn.out);
    }
    norm(encoder_norm_);
    norm(decoder_norm_);
    lin(output_);
}

void Seq2SeqModel::init_parameters() {
    std::mt19937_64 rng(arch_.seed);
    const std::size_t w = arch_.width;
    const std::size_t f = w * arch_.ffn_multiplier;
    auto gauss = [&](std::size_t r, std::size_t c, double sd) {
        std::normal_distribution<double> n(0.0, sd);
        Matrix m(r, c);
        for (double& x : m.data()) x = n(rng);
        return m;
    };
    auto linear = [&](std::size_t in, std::size_t out, double gain = 1.0) {
        return Linear{nn::Parameter("w", gauss(in, out, gain / std::sqrt(static_cast<double>(in)))),
                      nn::Parameter("b", Matrix(1, out))};
    };
    auto norm = [&] { return Norm{nn::Parameter("gamma", Matrix(1, w, 1.0)), nn::Parameter("beta", Matrix(1, w))}; };
    auto attention = [&] { return Attention{linear(w, w), linear(w, w), linear(w, w), linear(w, w)}; };
    embedding_ = nn::Parameter("embedding", gauss(vocab_.size(), w, 1.0));
    encoder_.clear();
    decoder_.clear();
    for (std::size_t i = 0; i < arch_.encoder_layers; ++i) {
        encoder_.push_back({norm(), norm(), attention(), {linear(w, f), linear(f, w)}});
    }
    for (std::size_t i = 0; i < arch_.decoder_layers; ++i) {
        decoder_.push_back({norm(), norm(), norm(), attention(), attention(), {linear(w, f), linear(f, w)}});
    }
    encoder_norm_ = norm();
    decoder_norm_ = norm();
    // Small output weights keep the initial next-token distribution near uniform.
    output_ = linear(w, vocab_.size(), 0.1);
}

std::vector<nn::Parameter*> Seq2SeqModel::parameters() {
    std::vector<nn::Parameter*> ps;
    for_each_parameter([&](nn::Parameter& p) { ps.push_back(&p); });
    return ps;
}

std::size_t Seq2SeqModel::parameter_count() const {
    std::size_t n = 0;
    const_cast<Seq2SeqModel*>(this)->for_each_parameter([&](nn::Parameter& p) { n += p.value.size(); });
    return n;
}

nn::Var Seq2SeqModel::embed(nn::Graph& g, const std::vector<std::size_t>& ids, const std::vector<nn::Segment>& segs) {
    auto x = g.embedding(g.param(embedding_), ids);
    return g.add(x, g.input(sinusoidal(segs, ids.size(), arch_.width)));
}

namespace {

nn::Var apply_linear(nn::Graph& g, nn::Var x, nn::Parameter& w, nn::Parameter& b) {
    return g.add_row(g.matmul(x, g.param(w)), g.param(b));
}

}  // namespace

nn::Var Seq2SeqModel::encode(nn::Graph& g, const std::vector<std::size_t>& ids, const std::vector<nn::Segment>& segs) {
    auto x = embed(g, ids, segs);
    auto lin = [&](nn::Var v, Linear& l) { return apply_linear(g, v, l.w, l.b); };
    for (auto& l : encoder_) {
        auto h = g.layer_norm(x, g.param(l.n1.gamma), g.param(l.n1.beta));
        auto a = g.attention(lin(h, l.self.q), lin(h, l.self.k), lin(h, l.self.v), segs, segs, arch_.heads, false);
        x = g.add(x, lin(a, l.self.o));
        h = g.layer_norm(x, g.param(l.n2.gamma), g.param(l.n2.beta));
        x = g.add(x, lin(g.gelu(lin(h, l.ffn.in)), l.ffn.out));
    }
    return g.layer_norm(x, g.param(encoder_norm_.gamma), g.param(encoder_norm_.beta));
}

nn::Var Seq2SeqModel::decode(nn::Graph& g, nn::Var memory, const std::vector<nn::Segment>& mem_segs,
                             const std::vector<std::size_t>& ids, const std::vector<nn::Segment>& segs) {
    auto x = embed(g, ids, segs);
    auto lin = [&](nn::Var v, Linear& l) { return apply_linear(g, v, l.w, l.b); };
    for (auto& l : decoder_) {
        auto h = g.layer_norm(x, g.param(l.n1.gamma), g.param(l.n1.beta));
        auto a = g.attention(lin(h, l.self.q), lin(h, l.self.k), lin(h, l.self.v), segs, segs, arch_.heads, true);
        x = g.add(x, lin(a, l.self.o));
        h = g.layer_norm(x, g.param(l.n2.gamma), g.param(l.n2.beta));
        a = g.attention(lin(h, l.cross.q), lin(memory, l.cross.k), lin(memory, l.cross.v), segs, mem_segs,
                        arch_.heads, false);
        x = g.add(x, lin(a, l.cross.o));
        h = g.layer_norm(x, g.param(l.n3.gamma), g.param(l.n3.beta));
        x = g.add(x, lin(g.gelu(lin(h, l.ffn.in)), l.ffn.out));
    }
    x = g.layer_norm(x, g.param(decoder_norm_.gamma), g.param(decoder_norm_.beta));
    return lin(x, output_);
}

std::vector<std::size_t> Seq2SeqModel::clip_source(const std::vector<std::size_t>& src) const {
    std::vector<std::size_t> s(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(std::min(src.size(), arch_.max_length)));
    s.push_back(GeneratorVocabulary::kEos);
    return s;
}

nn::Var Seq2SeqModel::batch_loss(nn::Graph& g, const std::vector<std::vector<std::size_t>>& srcs,
                                 const std::vector<std::vector<std::size_t>>& tgts) {
    if (srcs.size() != tgts.size() || srcs.empty()) throw PreconditionError("batch_loss needs matching non-empty batches");
    std::vector<std::size_t> enc_ids, dec_ids, targets;
    std::vector<std::vector<std::size_t>> clipped;
    for (std::size_t b = 0; b < srcs.size(); ++b) {
        clipped.push_back(clip_source(srcs[b]));
        enc_ids.insert(enc_ids.end(), clipped.back().begin(), clipped.back().end());
        dec_ids.push_back(GeneratorVocabulary::kBos);
        dec_ids.insert(dec_ids.end(), tgts[b].begin(), tgts[b].end());
        targets.insert(targets.end(), tgts[b].begin(), tgts[b].end());
        targets.push_back(GeneratorVocabulary::kEos);
    }
    const auto enc_segs = segments_of(clipped, 0);
    const auto dec_segs = segments_of(tgts, 1);
    auto memory = encode(g, enc_ids, enc_segs);
    auto logits = decode(g, memory, enc_segs, dec_ids, dec_segs);
    return g.cross_entropy(logits, targets);
}

Matrix Seq2SeqModel::logits(const std::vector<std::size_t>& src, const std::vector<std::size_t>& dec_in) const {
    // Parameters are only read on a non-recording graph.
    auto* self = const_cast<Seq2SeqModel*>(this);
    nn::Graph g(false);
    const std::vector<std::vector<std::size_t>> srcs = {clip_source(src)};
    const auto enc_segs = segments_of(srcs, 0);
    auto memory = self->encode(g, srcs[0], enc_segs);
    const std::vector<nn::Segment> dec_segs = {{0, dec_in.size()}};
    return g.value(self->decode(g, memory, enc_segs, dec_in, dec_segs));
}

double Seq2SeqModel::teacher_forcing_loss(const std::vector<std::size_t>& src,
                                          const std::vector<std::size_t>& tgt) const {
    std::vector<std::size_t> dec_in = {GeneratorVocabulary::kBos};
    dec_in.insert(dec_in.end(), tgt.begin(), tgt.end());
    const Matrix lg = logits(src, dec_in);
    double loss = 0.0;
    for (std::size_t t = 0; t < dec_in.size(); ++t) {
        const std::size_t gold = t < tgt.size() ? tgt[t] : GeneratorVocabulary::kEos;
        const auto row = lg.row(t);
        const double mx = *std::ranges::max_element(row);
        double z = 0.0;
        for (double v : row) z += std::exp(v - mx);
        loss += mx + std::log(z) - row[gold];
    }
    return loss;
}

double Seq2SeqModel::teacher_forcing_loss(const TextPair& pair, std::size_t* oov) const {
    return teacher_forcing_loss(vocab_.encode(pair.source, oov), vocab_.encode(pair.target, oov));
}

std::vector<std::vector<double>> Seq2SeqModel::step_distributions(const std::vector<std::size_t>& src,
                                                                  const std::vector<std::size_t>& tgt) const {
    std::vector<std::size_t> dec_in = {GeneratorVocabulary::kBos};
    dec_in.insert(dec_in.end(), tgt.begin(), tgt.end());
    const Matrix lg = logits(src, dec_in);
    std::vector<std::vector<double>> out;
    for (std::size_t t = 0; t < lg.rows(); ++t) out.push_back(softmax_row(lg.row(t)));
    return out;
}

std::vector<std::size_t> Seq2SeqModel::generate_ids(const std::vector<std::size_t>& src) const {
    auto* self = const_cast<Seq2SeqModel*>(this);
    const std::vector<std::vector<std::size_t>> srcs = {clip_source(src)};
    const auto enc_segs = segments_of(srcs, 0);
    Matrix memory;
    {
        nn::Graph g(false);
        memory = g.value(self->encode(g, srcs[0], enc_segs));
    }
    std::vector<std::size_t> dec_in = {GeneratorVocabulary::kBos};
    std::vector<std::size_t> out;
    while (out.size() < arch_.max_length) {
        nn::Graph g(false);
        const std::vector<nn::Segment> dec_segs = {{0, dec_in.size()}};
        const auto lg = g.value(self->decode(g, g.input(memory), enc_segs, dec_in, dec_segs));
        const auto row = lg.row(lg.rows() - 1);
        const auto next = static_cast<std::size_t>(std::ranges::max_element(row) - row.begin());
        if (next == GeneratorVocabulary::kEos) break;
        out.push_back(next);
        dec_in.push_back(next);
    }
    return out;
}

std::string Seq2SeqModel::generate(const std::string& text) const {
    return vocab_.decode(generate_ids(vocab_.encode(text)));
}

// ---- checkpoint ----

std::string Seq2SeqModel::serialize() const {
    io::BinaryWriter w;
    w.raw(kGeneratorMagic, sizeof kGeneratorMagic - 1);
    w.u32(kGeneratorVersion);
    w.str("pre-ln-transformer-encoder-decoder/sinusoidal/greedy");
    w.u64(arch_.width);
    w.u64(arch_.heads);
    w.u64(arch_.encoder_layers);
    w.u64(arch_.decoder_layers);
    w.u64(arch_.ffn_multiplier);
    w.u64(arch_.max_length);
    w.u64(arch_.seed);
    w.u64(train_seed);
    w.u64(oov_tally);
    w.u64(vocab_.size());
    for (const auto& word : vocab_.words()) w.str(word);
    const_cast<Seq2SeqModel*>(this)->for_each_parameter([&](nn::Parameter& p) { w.matrix(p.value); });
    w.doubles(loss_history);
    return w.bytes();
}

Seq2SeqModel Seq2SeqModel::deserialize(std::string bytes) {
    io::BinaryReader r(std::move(bytes));
    r.expect_magic(std::string_view(kGeneratorMagic, sizeof kGeneratorMagic - 1));
    if (r.u32() != kGeneratorVersion) throw Error("unsupported generator checkpoint version");
    r.str();
    GeneratorArchitecture arch;
    arch.width = r.u64();
    arch.heads = r.u64();
    arch.encoder_layers = r.u64();
    arch.decoder_layers = r.u64();
    arch.ffn_multiplier = r.u64();
    arch.max_length = r.u64();
    arch.seed = r.u64();
    const std::uint64_t train_seed = r.u64();
    const std::uint64_t oov = r.u64();
    const std::uint64_t n = r.u64();
    if (n < 3 || n > r.remaining()) throw Error("invalid generator vocabulary size");
    std::vector<std::string> words;
    for (std::uint64_t i = 0; i < n; ++i) words.push_back(r.str());
    GeneratorVocabulary vocab;
    for (std::size_t i = 3; i < words.size(); ++i) vocab.add(words[i]);
    if (vocab.words() != words) throw Error("generator vocabulary is corrupt");
    Seq2SeqModel m(std::move(vocab), arch);
    m.for_each_parameter([&](nn::Parameter& p) {
        Matrix v = r.matrix();
        if (v.rows() != p.value.rows() || v.cols() != p.value.cols()) {
            throw Error("generator checkpoint shapes do not match header");
        }
        p = nn::Parameter(p.name, std::move(v));
    });
    m.loss_history = r.doubles();
    m.train_seed = train_seed;
    m.oov_tally = oov;
    if (!r.at_end()) throw Error("trailing bytes in generator checkpoint");
    return m;
}

void Seq2SeqModel::save(const std::filesystem::path& path) const { io::write_file_atomic(path, serialize()); }

Seq2SeqModel Seq2SeqModel::load(const std::filesystem::path& path) { return deserialize(io::read_file(path)); }

// ---- training ----

Seq2SeqModel make_generator(const std::vector<TextPair>& pairs, GeneratorArchitecture arch) {
    return Seq2SeqModel(GeneratorVocabulary::build(pairs), arch);
}

Seq2SeqModel finetune(Seq2SeqModel model, const std::vector<TextPair>& pairs, const GeneratorTrainConfig& cfg) {
    if (pairs.empty()) throw PreconditionError("generator training needs at least one pair");
    if (cfg.batch_size == 0) throw PreconditionError("batch_size must be positive");
    std::vector<std::vector<std::size_t>> srcs, tgts;
    std::size_t oov = 0, tokens = 0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        srcs.push_back(model.vocabulary().encode(pairs[i].source, &oov));
        tgts.push_back(model.vocabulary().encode(pairs[i].target, &oov));
        if (srcs.back().size() > model.architecture().max_length || tgts.back().size() > model.architecture().max_length) {
            throw PreconditionError("pair " + std::to_string(i) + " exceeds the generator max_length");
        }
        tokens += tgts.back().size() + 1;
    }
    model.oov_tally += oov;
    model.train_seed = cfg.seed;

    auto full_loss = [&] {
        double s = 0.0;
        for (std::size_t i = 0; i < srcs.size(); ++i) s += model.teacher_forcing_loss(srcs[i], tgts[i]);
        return s / static_cast<double>(tokens);
    };
    model.loss_history.clear();
    model.loss_history.push_back(full_loss());

    nn::Adam opt(model.parameters(), {.learning_rate = cfg.learning_rate,
                                      .weight_decay = cfg.weight_decay,
                                      .clip_norm = cfg.clip_norm});
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<std::vector<std::size_t>> bs, bt;
            std::size_t batch_tokens = 0;
            for (std::size_t j = start; j < end; ++j) {
                bs.push_back(srcs[order[j]]);
                bt.push_back(tgts[order[j]]);
                batch_tokens += bt.back().size() + 1;
            }
            nn::Graph g;
            auto loss = model.batch_loss(g, bs, bt);
            const double value = g.value(loss)(0, 0);
            if (!std::isfinite(value)) throw DivergenceError("generator training", epoch);
            epoch_loss += value;
            opt.zero_grad();
            g.backward(g.scale(loss, 1.0 / static_cast<double>(batch_tokens)));
            opt.step();
        }
        model.loss_history.push_back(epoch_loss / static_cast<double>(tokens));
    }
    return model;
}

double exact_match(const Seq2SeqModel& model, const std::vector<TextPair>& pairs) {
    if (pairs.empty()) return 0.0;
    std::size_t hits = 0;
    for (const auto& p : pairs) {
        if (model.generate(p.source) == join_generator_tokens(generator_tokens(p.target))) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

}  // namespace fairflow
