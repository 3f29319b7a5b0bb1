#include "fairflow/embedding.hpp"

#include "fairflow/errors.hpp"
#include "fairflow/io.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace fairflow {

namespace {

constexpr char kCacheMagic[] = "FFEMBC";

// Fixed mixture of context vectors: weight 1/(1+distance), normalised.
std::vector<double> mix_context(std::vector<double> self, std::span<const std::string> context,
                                std::size_t center, double context_weight,
                                const auto& vector_of) {
    const std::size_t d = self.size();
    std::vector<double> ctx(d, 0.0);
    double total = 0.0;
    for (std::size_t j = 0; j < context.size(); ++j) {
        if (j == center) continue;
        const double dist = j > center ? double(j - center) : double(center - j);
        const double w = 1.0 / (1.0 + dist);
        const std::vector<double> v = vector_of(context[j]);
        for (std::size_t i = 0; i < d; ++i) ctx[i] += w * v[i];
        total += w;
    }
    if (total > 0.0) {
        for (std::size_t i = 0; i < d; ++i) self[i] += context_weight * ctx[i] / total;
    }
    return self;
}

}  // namespace

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

ContextualEmbedding EmbeddingBackend::embed(const Occurrence& occ) const {
    if (occ.center >= occ.context.size()) throw PreconditionError("occurrence center outside context");
    ContextualEmbedding out;
    out.occurrence = occ;
    std::span<const std::string> ctx(occ.context);
    std::size_t center = occ.center;
    const std::size_t limit = max_length();
    if (ctx.size() > limit) {
        const std::size_t left = std::min(center, limit / 2);
        const std::size_t begin = center - left;
        const std::size_t len = std::min(limit, ctx.size() - begin);
        ctx = ctx.subspan(begin, len);
        center -= begin;
        out.truncated = true;
    }
    out.vector = encode(ctx, center);
    for (double v : out.vector) {
        if (!std::isfinite(v)) throw BackendError(name() + " produced a non-finite embedding");
    }
    return out;
}

void AttributeLexicon::add(std::string word, Group group, std::string anchor) {
    entries[case_fold(word)] = Entry{group, case_fold(anchor)};
}

AttributeLexicon AttributeLexicon::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw PreconditionError("cannot open lexicon " + path.string());
    AttributeLexicon lex;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, '\t')) cols.push_back(col);
        if (cols.size() != 3) throw ParseError("expected word<TAB>group<TAB>anchor", lineno);
        try {
            lex.add(cols[0], parse_group(cols[1]), cols[2]);
        } catch (const PreconditionError& e) {
            throw ParseError(e.what(), lineno);
        }
    }
    return lex;
}

ToyBackend::ToyBackend(ToyBackendConfig config, AttributeLexicon lexicon)
    : config_(config), lexicon_(std::move(lexicon)) {
    if (config_.dim == 0) throw PreconditionError("toy backend dimension must be positive");
    attribute_direction_ = seeded_vector("\x01attribute-direction");
    const double n = std::sqrt(std::inner_product(attribute_direction_.begin(),
                                                  attribute_direction_.end(),
                                                  attribute_direction_.begin(), 0.0));
    for (double& x : attribute_direction_) x /= n;
}

std::vector<double> ToyBackend::seeded_vector(const std::string& key) const {
    std::mt19937_64 rng(fnv1a64(key) ^ (config_.seed * 0x9E3779B97F4A7C15ULL));
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(config_.dim)));
    std::vector<double> v(config_.dim);
    for (double& x : v) x = normal(rng);
    return v;
}

std::vector<double> ToyBackend::word_vector(const std::string& word) const {
    auto it = lexicon_.entries.find(word);
    const bool planted = it != lexicon_.entries.end();
    std::vector<double> v = planted ? seeded_vector("\x02" + it->second.anchor) : seeded_vector(word);
    // Static vectors carry no attribute component; only lexicon words get one.
    const double proj = std::inner_product(v.begin(), v.end(), attribute_direction_.begin(), 0.0);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= proj * attribute_direction_[i];
    if (!planted) return v;
    const double sign = it->second.group == Group::a ? 1.0 : -1.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] += sign * config_.attribute_strength * attribute_direction_[i];
    }
    return v;
}

std::vector<double> ToyBackend::encode(std::span<const std::string> context,
                                       std::size_t center) const {
    return mix_context(word_vector(context[center]), context, center, config_.context_weight,
                       [this](const std::string& w) { return word_vector(w); });
}

StaticVectorsBackend::StaticVectorsBackend(const std::filesystem::path& path,
                                           double context_weight, std::size_t max_length)
    : name_("pretrained:" + path.string()), context_weight_(context_weight),
      max_length_(max_length) {
    std::ifstream in(path);
    if (!in) throw PreconditionError("cannot open word vectors " + path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ss(line);
        std::string word;
        if (!(ss >> word)) continue;
        std::vector<double> v;
        double x;
        while (ss >> x) v.push_back(x);
        if (dim_ == 0) dim_ = v.size();
        if (v.size() != dim_ || dim_ == 0) throw ParseError("inconsistent vector dimension", lineno);
        vectors_.emplace(case_fold(word), std::move(v));
    }
    if (vectors_.empty()) throw PreconditionError("no vectors in " + path.string());
}

std::vector<double> StaticVectorsBackend::encode(std::span<const std::string> context,
                                                 std::size_t center) const {
    auto lookup = [this](const std::string& w) {
        auto it = vectors_.find(w);
        return it == vectors_.end() ? std::vector<double>(dim_, 0.0) : it->second;
    };
    return mix_context(lookup(context[center]), context, center, context_weight_, lookup);
}

std::unique_ptr<EmbeddingBackend> make_embedding_backend(const std::string& spec,
                                                         const ToyBackendConfig& toy,
                                                         const AttributeLexicon& lexicon) {
    if (spec == "toy") return std::make_unique<ToyBackend>(toy, lexicon);
    if (spec.starts_with("pretrained:")) {
        return std::make_unique<StaticVectorsBackend>(spec.substr(11), toy.context_weight,
                                                      toy.max_length);
    }
    throw PreconditionError("unknown embedding backend '" + spec + "'");
}

std::vector<double> pooled_embedding(const EmbeddingBackend& backend, const TokenizedCorpus& corpus,
                                     std::size_t doc_index) {
    const Document& doc = corpus.documents.at(doc_index);
    std::vector<double> mean(backend.dim(), 0.0);
    if (doc.tokens.empty()) return mean;
    for (std::size_t t = 0; t < doc.tokens.size(); ++t) {
        const auto e = backend.embed(make_occurrence(corpus, doc_index, t));
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += e.vector[i];
    }
    for (double& x : mean) x /= static_cast<double>(doc.tokens.size());
    return mean;
}

std::string EmbeddingCache::serialize() const {
    io::BinaryWriter w;
    w.raw(kCacheMagic, sizeof kCacheMagic - 1);
    w.u32(kVersion);
    w.str(backend);
    w.u64(dim);
    w.u64(records.size());
    for (const auto& r : records) {
        if (r.vector.size() != dim) throw DimensionMismatch(dim, r.vector.size());
        w.fixed_str(r.doc_id, kDocIdWidth);
        w.u32(r.token_index);
        w.u32(r.flags);
        w.raw(r.vector.data(), dim * sizeof(double));
    }
    return w.bytes();
}

EmbeddingCache EmbeddingCache::deserialize(std::string bytes) {
    io::BinaryReader r(std::move(bytes));
    r.expect_magic(std::string_view(kCacheMagic, sizeof kCacheMagic - 1));
    if (r.u32() != kVersion) throw Error("unsupported embedding cache version");
    EmbeddingCache c;
    c.backend = r.str();
    c.dim = r.u64();
    const auto count = r.u64();
    const std::size_t record_size = kDocIdWidth + 8 + c.dim * sizeof(double);
    if (r.remaining() != count * record_size) throw Error("embedding cache size does not match header");
    c.records.resize(count);
    for (auto& rec : c.records) {
        rec.doc_id = r.fixed_str(kDocIdWidth);
        rec.token_index = r.u32();
        rec.flags = r.u32();
        rec.vector.resize(c.dim);
        for (double& x : rec.vector) x = r.f64();
    }
    return c;
}

void EmbeddingCache::save(const std::filesystem::path& path) const {
    io::write_file_atomic(path, serialize());
}

EmbeddingCache EmbeddingCache::load(const std::filesystem::path& path) {
    return deserialize(io::read_file(path));
}

}  // namespace fairflow
