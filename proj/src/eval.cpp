#include "fairflow/eval.hpp"

#include "fairflow/errors.hpp"
#include "fairflow/generator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace fairflow {

std::vector<std::string> lm_tokens(const std::string& text) {
    auto words = generator_tokens(text);
    for (auto& w : words) w = case_fold(w);
    return words;
}

// ---- language models ----

UniformLM::UniformLM(std::size_t vocabulary_size) : v_(vocabulary_size) {
    if (v_ == 0) throw PreconditionError("uniform LM needs a positive vocabulary size");
}

std::vector<double> UniformLM::log_probs(const std::vector<std::string>& tokens) const {
    return std::vector<double>(tokens.size() + 1, -std::log(static_cast<double>(v_)));
}

namespace {

constexpr std::size_t kEosId = 0;
constexpr std::size_t kUnkId = 1;
constexpr std::size_t kBosId = std::numeric_limits<std::uint32_t>::max();

std::uint64_t pack(std::size_t u, std::size_t v) { return (static_cast<std::uint64_t>(u) << 32) | v; }

}  // namespace

WittenBellTrigram::WittenBellTrigram(const std::vector<std::vector<std::string>>& sentences) {
    ids_.emplace("</s>", kEosId);
    ids_.emplace("<unk>", kUnkId);
    std::size_t seen = 0;
    for (const auto& s : sentences) {
        for (const auto& w : s) {
            ids_.emplace(w, ids_.size());
            ++seen;
        }
    }
    if (seen == 0) throw EmptyCorpusError();
    for (const auto& s : sentences) {
        std::size_t u = kBosId, v = kBosId;
        for (std::size_t i = 0; i <= s.size(); ++i) {
            const std::size_t w = i < s.size() ? ids_.at(s[i]) : kEosId;
            unigram_.total += 1.0;
            unigram_.next[w] += 1.0;
            auto& b = bigram_[v];
            b.total += 1.0;
            b.next[w] += 1.0;
            auto& t = trigram_[pack(u, v)];
            t.total += 1.0;
            t.next[w] += 1.0;
            u = v;
            v = w;
        }
    }
}

WittenBellTrigram WittenBellTrigram::from_texts(const std::vector<std::string>& texts) {
    std::vector<std::vector<std::string>> s;
    for (const auto& t : texts) s.push_back(lm_tokens(t));
    return WittenBellTrigram(s);
}

std::size_t WittenBellTrigram::id(const std::string& w) const {
    auto it = ids_.find(w);
    return it == ids_.end() ? kUnkId : it->second;
}

double WittenBellTrigram::prob(std::size_t u, std::size_t v, std::size_t w) const {
    auto interpolate = [](const Stats& s, std::size_t w, double lower) {
        auto it = s.next.find(w);
        const double c = it == s.next.end() ? 0.0 : it->second;
        const double types = static_cast<double>(s.next.size());
        return (c + types * lower) / (s.total + types);
    };
    double p = interpolate(unigram_, w, 1.0 / static_cast<double>(ids_.size()));
    if (auto it = bigram_.find(v); it != bigram_.end()) p = interpolate(it->second, w, p);
    if (auto it = trigram_.find(pack(u, v)); it != trigram_.end()) p = interpolate(it->second, w, p);
    return p;
}

std::vector<double> WittenBellTrigram::log_probs(const std::vector<std::string>& tokens) const {
    std::vector<double> out;
    out.reserve(tokens.size() + 1);
    std::size_t u = kBosId, v = kBosId;
    for (std::size_t i = 0; i <= tokens.size(); ++i) {
        const std::size_t w = i < tokens.size() ? id(tokens[i]) : kEosId;
        out.push_back(std::log(prob(u, v, w)));
        u = v;
        v = w;
    }
    return out;
}

nlohmann::ordered_json PerplexityResult::to_json() const {
    return {{"perplexity", perplexity}, {"total_nll", total_nll}, {"scored_tokens", scored_tokens}, {"pooling", pooling}};
}

PerplexityResult perplexity(const std::vector<std::string>& texts, const LanguageModel& lm) {
    if (texts.empty()) throw PreconditionError("perplexity needs at least one text");
    PerplexityResult r;
    for (const auto& t : texts) {
        const auto tokens = lm_tokens(t);
        const auto lp = lm.log_probs(tokens);
        if (lp.size() != tokens.size() + 1) throw BackendError(lm.name() + " returned a wrong number of log-probabilities");
        for (double x : lp) {
            if (!(x <= 0.0) || !std::isfinite(x)) throw BackendError(lm.name() + " returned an invalid log-probability");
            r.total_nll -= x;
        }
        r.scored_tokens += lp.size();
    }
    r.perplexity = std::exp(r.total_nll / static_cast<double>(r.scored_tokens));
    return r;
}

// ---- transfer accuracy ----

PooledEmbeddingClassifier::PooledEmbeddingClassifier(std::shared_ptr<const EmbeddingBackend> backend,
                                                     Tokenizer tokenizer, SubspaceClassifier clf)
    : backend_(std::move(backend)), tokenizer_(std::move(tokenizer)), clf_(std::move(clf)) {
    if (clf_.input_dim() != backend_->dim()) throw DimensionMismatch(backend_->dim(), clf_.input_dim());
}

std::vector<double> PooledEmbeddingClassifier::pooled(const std::string& text) const {
    const auto corpus = make_corpus({RawDocument{"t", text, {}, {}}}, tokenizer_);
    return pooled_embedding(*backend_, corpus, 0);
}

PooledEmbeddingClassifier PooledEmbeddingClassifier::train(const std::vector<std::string>& texts,
                                                           const std::vector<Group>& groups,
                                                           std::shared_ptr<const EmbeddingBackend> backend,
                                                           Tokenizer tokenizer, const ClassifierTrainConfig& cfg) {
    if (texts.size() != groups.size()) throw DimensionMismatch(texts.size(), groups.size());
    PooledEmbeddingClassifier tmp(backend, tokenizer, SubspaceClassifier(backend->dim(), 1, 0));
    std::vector<std::vector<double>> xa, xb;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        (groups[i] == Group::a ? xa : xb).push_back(tmp.pooled(texts[i]));
    }
    return PooledEmbeddingClassifier(std::move(backend), std::move(tokenizer), train_binary_classifier(xa, xb, cfg));
}

double PooledEmbeddingClassifier::probability(const std::string& text, Group g) const {
    const auto [pa, pb] = clf_.classify(pooled(text));
    return g == Group::a ? pa : pb;
}

double transfer_accuracy(const std::vector<double>& p_original) {
    if (p_original.empty()) throw PreconditionError("transfer accuracy needs at least one instance");
    double s = 0.0;
    for (double p : p_original) {
        if (!(p >= 0.0 && p <= 1.0)) throw PreconditionError("probabilities must lie in [0, 1]");
        s += 1.0 - p;
    }
    return s / static_cast<double>(p_original.size());
}

double transfer_accuracy(const std::vector<Group>& original_groups, const std::vector<std::string>& counterfactuals,
                         const TextAttributeClassifier& clf) {
    if (original_groups.size() != counterfactuals.size()) {
        throw DimensionMismatch(original_groups.size(), counterfactuals.size());
    }
    std::vector<double> p;
    p.reserve(counterfactuals.size());
    for (std::size_t i = 0; i < counterfactuals.size(); ++i) {
        p.push_back(clf.probability(counterfactuals[i], original_groups[i]));
    }
    return transfer_accuracy(p);
}

// ---- fairness ----

namespace {

Ratio make_ratio(std::uint64_t num, std::uint64_t den) {
    const std::uint64_t g = std::gcd(num, den);
    return g == 0 ? Ratio{0, 1} : Ratio{num / g, den / g};
}

Ratio abs_diff(const Ratio& x, const Ratio& y) {
    const std::uint64_t l = x.num * y.den;
    const std::uint64_t r = y.num * x.den;
    return make_ratio(l > r ? l - r : r - l, x.den * y.den);
}

void check_binary(const std::vector<int>& v, const char* what) {
    for (int x : v) {
        if (x != 0 && x != 1) throw PreconditionError(std::string(what) + " must be 0 or 1");
    }
}

nlohmann::ordered_json ratio_json(const Ratio& r) {
    return {{"value", r.value()}, {"num", r.num}, {"den", r.den}};
}

nlohmann::ordered_json counts_json(const ConfusionCounts& c) {
    return {{"tp", c.tp}, {"fn", c.fn}, {"fp", c.fp}, {"tn", c.tn}};
}

}  // namespace

nlohmann::ordered_json FairnessReport::to_json() const {
    nlohmann::ordered_json j;
    j["tprd"] = ratio_json(tprd);
    j["fprd"] = ratio_json(fprd);
    j["accuracy"] = accuracy;
    j["f1"] = f1;
    j["tpr"] = {{"a", ratio_json(tpr_a)}, {"b", ratio_json(tpr_b)}};
    j["fpr"] = {{"a", ratio_json(fpr_a)}, {"b", ratio_json(fpr_b)}};
    j["counts"] = {{"a", counts_json(group_a)}, {"b", counts_json(group_b)}};
    return j;
}

FairnessReport tprd_fprd(const std::vector<int>& predictions, const std::vector<int>& labels,
                         const std::vector<Group>& groups) {
    if (predictions.size() != labels.size()) throw DimensionMismatch(labels.size(), predictions.size());
    if (groups.size() != labels.size()) throw DimensionMismatch(labels.size(), groups.size());
    check_binary(predictions, "predictions");
    check_binary(labels, "labels");
    FairnessReport r;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto& c = groups[i] == Group::a ? r.group_a : r.group_b;
        if (labels[i] == 1) {
            (predictions[i] == 1 ? c.tp : c.fn)++;
        } else {
            (predictions[i] == 1 ? c.fp : c.tn)++;
        }
    }
    for (auto [c, name] : {std::pair{&r.group_a, "a"}, std::pair{&r.group_b, "b"}}) {
        if (c->positives() == 0) throw UndefinedMetric(std::string("TPR undefined: no label=1 instances in group ") + name);
        if (c->negatives() == 0) throw UndefinedMetric(std::string("FPR undefined: no label=0 instances in group ") + name);
    }
    r.tpr_a = make_ratio(r.group_a.tp, r.group_a.positives());
    r.tpr_b = make_ratio(r.group_b.tp, r.group_b.positives());
    r.fpr_a = make_ratio(r.group_a.fp, r.group_a.negatives());
    r.fpr_b = make_ratio(r.group_b.fp, r.group_b.negatives());
    r.tprd = abs_diff(r.tpr_a, r.tpr_b);
    r.fprd = abs_diff(r.fpr_a, r.fpr_b);
    const auto af = accuracy_f1(predictions, labels);
    r.accuracy = af.accuracy;
    r.f1 = af.f1;
    return r;
}

AccuracyF1 accuracy_f1(const std::vector<int>& predictions, const std::vector<int>& labels) {
    if (predictions.size() != labels.size()) throw DimensionMismatch(labels.size(), predictions.size());
    if (labels.empty()) throw PreconditionError("accuracy needs at least one instance");
    check_binary(predictions, "predictions");
    check_binary(labels, "labels");
    std::size_t correct = 0, tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        correct += predictions[i] == labels[i];
        tp += predictions[i] == 1 && labels[i] == 1;
        fp += predictions[i] == 1 && labels[i] == 0;
        fn += predictions[i] == 0 && labels[i] == 1;
    }
    AccuracyF1 r;
    r.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
    if (2 * tp + fp + fn == 0) {
        r.warning = "F1 undefined without positive predictions or labels; reported as 0";
    } else {
        r.f1 = static_cast<double>(2 * tp) / static_cast<double>(2 * tp + fp + fn);
    }
    return r;
}

PredictionSet parse_predictions_jsonl(const std::string& text) {
    PredictionSet s;
    std::istringstream in(text);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            s.predictions.push_back(j.at("pred").get<int>());
            s.labels.push_back(j.at("label").get<int>());
            s.groups.push_back(parse_group(j.at("group").get<std::string>()));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(e.what(), n);
        } catch (const PreconditionError& e) {
            throw ParseError(e.what(), n);
        }
    }
    return s;
}

// ---- bias-induced sampling ----

namespace {

std::pair<std::size_t, std::size_t> split_floor(std::size_t total, double frac) {
    // The small slack absorbs representation error such as 9000 * 0.12.
    auto a = static_cast<std::size_t>(std::floor(static_cast<double>(total) * frac + 1e-9));
    auto b = static_cast<std::size_t>(std::floor(static_cast<double>(total) * (1.0 - frac) + 1e-9));
    a = std::min(a, total);
    b = std::min(b, total - a);
    const std::size_t rem = total - a - b;
    if (a >= b) {
        a += rem;
    } else {
        b += rem;
    }
    return {a, b};
}

void check_fraction(double f, const char* what) {
    if (!(f >= 0.0 && f <= 1.0)) throw PreconditionError(std::string(what) + " must lie in [0, 1]");
}

}  // namespace

CellCounts bias_cell_counts(const BiasSampleSpec& spec) {
    check_fraction(spec.positive_fraction, "positive_fraction");
    check_fraction(spec.female_in_positive_fraction, "female_in_positive_fraction");
    const double fneg = spec.female_in_negative_fraction.value_or(1.0 - spec.female_in_positive_fraction);
    check_fraction(fneg, "female_in_negative_fraction");
    const auto [pos, neg] = split_floor(spec.n, spec.positive_fraction);
    CellCounts c;
    std::tie(c.female_positive, c.male_positive) = split_floor(pos, spec.female_in_positive_fraction);
    std::tie(c.female_negative, c.male_negative) = split_floor(neg, fneg);
    return c;
}

CellCounts tally_cells(const std::vector<RawDocument>& docs) {
    CellCounts c;
    for (const auto& d : docs) {
        if (!d.label || !d.group) throw PreconditionError("document '" + d.id + "' lacks a label or group");
        const bool female = *d.group == Group::a;
        if (*d.label == 1) {
            (female ? c.female_positive : c.male_positive)++;
        } else {
            (female ? c.female_negative : c.male_negative)++;
        }
    }
    return c;
}

std::vector<RawDocument> induce_bias_sample(const std::vector<RawDocument>& dataset, const BiasSampleSpec& spec) {
    const CellCounts want = bias_cell_counts(spec);
    std::vector<std::size_t> cells[4];
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto& d = dataset[i];
        if (!d.label || !d.group) throw PreconditionError("document '" + d.id + "' lacks a label or group");
        if (*d.label != 0 && *d.label != 1) throw PreconditionError("document '" + d.id + "' has a non-binary label");
        const int cell = (*d.label == 1 ? 0 : 2) + (*d.group == Group::a ? 0 : 1);
        cells[cell].push_back(i);
    }
    const std::size_t counts[4] = {want.female_positive, want.male_positive, want.female_negative, want.male_negative};
    const char* names[4] = {"label=1, group=a (female, positive)", "label=1, group=b (male, positive)",
                            "label=0, group=a (female, negative)", "label=0, group=b (male, negative)"};
    std::mt19937_64 rng(spec.seed);
    std::vector<std::size_t> chosen;
    for (int c = 0; c < 4; ++c) {
        if (cells[c].size() < counts[c]) {
            throw PreconditionError("cell " + std::string(names[c]) + " has " + std::to_string(cells[c].size()) +
                                    " rows, need " + std::to_string(counts[c]));
        }
        std::shuffle(cells[c].begin(), cells[c].end(), rng);
        chosen.insert(chosen.end(), cells[c].begin(), cells[c].begin() + static_cast<std::ptrdiff_t>(counts[c]));
    }
    std::shuffle(chosen.begin(), chosen.end(), rng);
    std::vector<RawDocument> out;
    out.reserve(chosen.size());
    for (std::size_t i : chosen) out.push_back(dataset[i]);
    return out;
}

}  // namespace fairflow
