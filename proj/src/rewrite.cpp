#include "fairflow/rewrite.hpp"

#include "fairflow/errors.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <sstream>

namespace fairflow {

namespace {

bool is_upper(char c) { return c >= 'A' && c <= 'Z'; }
bool is_lower(char c) { return c >= 'a' && c <= 'z'; }

constexpr std::string_view kBos = "<s>";
constexpr std::string_view kEos = "</s>";

std::string join_word(const std::vector<std::string>& pieces, std::size_t begin, std::size_t end) {
    std::string out;
    for (std::size_t i = begin; i < end; ++i) {
        const auto& p = pieces[i];
        out += is_continuation(p) ? p.substr(kContinuationPrefix.size()) : p;
    }
    return out;
}

}  // namespace

CasePattern case_pattern(std::string_view word) {
    std::size_t letters = 0, upper = 0;
    bool first_upper = false, seen_letter = false;
    for (char c : word) {
        if (!is_upper(c) && !is_lower(c)) continue;
        ++letters;
        if (is_upper(c)) ++upper;
        if (!seen_letter) first_upper = is_upper(c);
        seen_letter = true;
    }
    if (upper == 0) return CasePattern::lower;
    if (first_upper && upper == 1) return CasePattern::capitalized;
    if (upper == letters) return CasePattern::upper;
    return CasePattern::other;
}

std::string apply_case(std::string_view word, std::string_view like) {
    std::string out = case_fold(word);
    switch (case_pattern(like)) {
        case CasePattern::lower: return out;
        case CasePattern::capitalized:
            for (char& c : out) {
                if (is_lower(c)) {
                    c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
                    break;
                }
            }
            return out;
        case CasePattern::upper:
            for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
            return out;
        case CasePattern::other: return std::string(word);
    }
    return out;
}

WorkingText WorkingText::from_document(const Document& doc) {
    WorkingText t;
    for (std::size_t i = 0; i < doc.tokens.size(); ++i) {
        t.words.push_back(doc.tokens[i].surface);
        t.space_before.push_back(doc.tokens[i].space_before);
        t.protect.push_back(false);
        t.origin.push_back(i);
    }
    return t;
}

std::vector<std::string> WorkingText::keys() const {
    std::vector<std::string> k;
    k.reserve(words.size());
    for (const auto& w : words) k.push_back(case_fold(w));
    return k;
}

std::string WorkingText::text() const {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i > 0 && space_before[i]) out += ' ';
        out += words[i];
    }
    return out;
}

nlohmann::ordered_json RewriteTrace::to_json() const {
    nlohmann::ordered_json j;
    j["substitutions"] = nlohmann::ordered_json::array();
    for (const auto& s : substitutions) {
        j["substitutions"].push_back({{"token_index", s.token_index}, {"original", s.original}, {"replacement", s.replacement}});
    }
    j["masked_spans"] = nlohmann::ordered_json::array();
    for (const auto& m : masked_spans) {
        j["masked_spans"].push_back({{"token_index", m.token_index},
                                     {"subtoken_begin", m.subtoken_begin},
                                     {"subtoken_end", m.subtoken_end},
                                     {"pass", m.pass}});
    }
    j["infills"] = nlohmann::ordered_json::array();
    for (const auto& f : infills) {
        j["infills"].push_back(
            {{"token_index", f.token_index}, {"replaced", f.replaced}, {"inserted", f.inserted}, {"pass", f.pass}});
    }
    j["flags"] = flags;
    return j;
}

RewriteTrace RewriteTrace::from_json(const nlohmann::json& j) {
    RewriteTrace t;
    for (const auto& s : j.at("substitutions")) {
        t.substitutions.push_back({s.at("token_index"), s.at("original"), s.at("replacement")});
    }
    for (const auto& m : j.at("masked_spans")) {
        t.masked_spans.push_back({m.at("token_index"), m.at("subtoken_begin"), m.at("subtoken_end"), m.at("pass")});
    }
    for (const auto& f : j.at("infills")) {
        t.infills.push_back({f.at("token_index"), f.at("replaced"), f.at("inserted").get<std::vector<std::string>>(),
                             f.at("pass")});
    }
    t.flags = j.at("flags").get<std::vector<std::string>>();
    return t;
}

WorkingText substitute(const Document& doc, const WordPairDictionary& dict, RewriteTrace* trace) {
    WorkingText t = WorkingText::from_document(doc);
    for (std::size_t i = 0; i < t.words.size(); ++i) {
        const auto cp = dict.counterpart(doc.tokens[i].key);
        if (!cp) continue;
        std::string repl = apply_case(*cp, t.words[i]);
        if (trace) trace->substitutions.push_back({i, t.words[i], repl});
        t.words[i] = std::move(repl);
        t.protect[i] = true;
    }
    return t;
}

void validate(const CorrectionConfig& cfg) {
    if (!(cfg.theta >= 0.0 && cfg.theta < 1.0)) throw PreconditionError("theta must lie in [0, 1)");
    if (!(cfg.max_mask_fraction >= 0.0 && cfg.max_mask_fraction <= 1.0)) {
        throw PreconditionError("max_mask_fraction must lie in [0, 1]");
    }
    if (cfg.passes < 1 || cfg.passes > 3) throw PreconditionError("correction passes must be 1, 2 or 3");
}

std::vector<std::size_t> detect_erratic(const std::vector<double>& scores, const std::vector<bool>& protect,
                                        const CorrectionConfig& cfg) {
    validate(cfg);
    if (protect.size() != scores.size()) throw DimensionMismatch(scores.size(), protect.size());
    std::vector<std::size_t> cand;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (cfg.protect_substituted && protect[i]) continue;
        if (scores[i] < cfg.theta) cand.push_back(i);
    }
    const auto cap = static_cast<std::size_t>(std::floor(cfg.max_mask_fraction * static_cast<double>(scores.size())));
    if (cand.size() > cap) {
        std::ranges::stable_sort(cand, [&](std::size_t x, std::size_t y) { return scores[x] < scores[y]; });
        cand.resize(cap);
        std::ranges::sort(cand);
    }
    return cand;
}

std::vector<std::size_t> detect_erratic(const WorkingText& text, const DiscriminatorBackend& disc,
                                        const CorrectionConfig& cfg) {
    const auto scores = disc.score(text.keys());
    if (scores.size() != text.size()) throw BackendError(disc.name() + " returned a wrong number of scores");
    for (double s : scores) {
        if (!(s >= 0.0 && s <= 1.0)) throw BackendError(disc.name() + " returned a score outside [0, 1]");
    }
    return detect_erratic(scores, text.protect, cfg);
}

std::size_t MaskedText::mask_count() const {
    return static_cast<std::size_t>(std::ranges::count_if(words, [](const Word& w) { return w.masked; }));
}

std::string MaskedText::text() const {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i > 0 && words[i].space_before) out += ' ';
        out += words[i].masked ? std::string(kMaskToken) : join_word(pieces, words[i].piece_begin, words[i].piece_end);
    }
    return out;
}

MaskedText mask_subtoken_groups(const WorkingText& text, const Tokenizer& tokenizer,
                                const std::vector<std::size_t>& indices) {
    const std::set<std::size_t> flagged(indices.begin(), indices.end());
    if (!flagged.empty() && *flagged.rbegin() >= text.size()) throw PreconditionError("mask index out of range");
    MaskedText m;
    m.origin_text = text.text();
    for (std::size_t i = 0; i < text.size(); ++i) {
        MaskedText::Word w;
        w.space_before = text.space_before[i];
        w.protect = text.protect[i];
        w.origin = text.origin[i];
        w.original = text.words[i];
        w.piece_begin = m.pieces.size();
        if (flagged.contains(i)) {
            w.masked = true;
            m.pieces.emplace_back(kMaskToken);
        } else {
            for (auto& p : tokenizer.word_pieces(text.words[i])) m.pieces.push_back(std::move(p));
        }
        w.piece_end = m.pieces.size();
        m.words.push_back(std::move(w));
    }
    return m;
}

MaskedText mask_subtoken_groups(const Document& doc, const std::vector<std::size_t>& indices) {
    const std::set<std::size_t> flagged(indices.begin(), indices.end());
    if (!flagged.empty() && *flagged.rbegin() >= doc.tokens.size()) throw PreconditionError("mask index out of range");
    MaskedText m;
    m.origin_text = doc.text;
    for (std::size_t i = 0; i < doc.tokens.size(); ++i) {
        const Token& t = doc.tokens[i];
        MaskedText::Word w;
        w.space_before = t.space_before;
        w.origin = i;
        w.original = t.surface;
        w.piece_begin = m.pieces.size();
        if (flagged.contains(i)) {
            w.masked = true;
            m.pieces.emplace_back(kMaskToken);
        } else {
            m.pieces.insert(m.pieces.end(), doc.subtokens.begin() + static_cast<std::ptrdiff_t>(t.subtoken_begin),
                            doc.subtokens.begin() + static_cast<std::ptrdiff_t>(t.subtoken_end));
        }
        w.piece_end = m.pieces.size();
        m.words.push_back(std::move(w));
    }
    return m;
}

WorkingText infill(MaskedText masked, const InfillerBackend& gen, RewriteTrace* trace, std::size_t pass) {
    std::vector<bool> filled(masked.words.size(), false);
    for (std::size_t wi = 0; wi < masked.words.size(); ++wi) {
        if (!masked.words[wi].masked) continue;
        std::vector<std::string> pieces = gen.fill(masked, wi);
        for (const auto& p : pieces) {
            if (p == kMaskToken) throw BackendError(gen.name() + " emitted a mask sentinel");
        }
        auto& w = masked.words[wi];
        const auto begin = masked.pieces.begin() + static_cast<std::ptrdiff_t>(w.piece_begin);
        masked.pieces.erase(begin, begin + static_cast<std::ptrdiff_t>(w.piece_end - w.piece_begin));
        masked.pieces.insert(masked.pieces.begin() + static_cast<std::ptrdiff_t>(w.piece_begin), pieces.begin(),
                             pieces.end());
        const auto delta = static_cast<std::ptrdiff_t>(pieces.size()) -
                           static_cast<std::ptrdiff_t>(w.piece_end - w.piece_begin);
        w.piece_end = w.piece_begin + pieces.size();
        for (std::size_t j = wi + 1; j < masked.words.size(); ++j) {
            masked.words[j].piece_begin = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(masked.words[j].piece_begin) + delta);
            masked.words[j].piece_end = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(masked.words[j].piece_end) + delta);
        }
        w.masked = false;
        filled[wi] = true;
        if (trace) trace->infills.push_back({wi, w.original, pieces, pass});
    }
    WorkingText out;
    for (std::size_t wi = 0; wi < masked.words.size(); ++wi) {
        const auto& w = masked.words[wi];
        const std::span<const std::string> span(masked.pieces.data() + w.piece_begin, w.piece_end - w.piece_begin);
        if (!filled[wi]) {
            out.words.push_back(join_word(masked.pieces, w.piece_begin, w.piece_end));
            out.space_before.push_back(w.space_before);
            out.protect.push_back(w.protect);
            out.origin.push_back(w.origin);
            continue;
        }
        const auto words = join_pieces(span);
        for (std::size_t k = 0; k < words.size(); ++k) {
            out.words.push_back(words[k]);
            out.space_before.push_back(k == 0 ? w.space_before : true);
            out.protect.push_back(false);
            out.origin.push_back(w.origin);
        }
    }
    return out;
}

WorkingText correct(WorkingText text, const Tokenizer& tokenizer, const DiscriminatorBackend& disc,
                    const InfillerBackend& gen, const CorrectionConfig& cfg, RewriteTrace* trace) {
    validate(cfg);
    if (!cfg.enabled) return text;
    for (std::size_t pass = 0; pass < cfg.passes; ++pass) {
        const auto idx = detect_erratic(text, disc, cfg);
        if (idx.empty()) break;
        MaskedText masked = mask_subtoken_groups(text, tokenizer, idx);
        if (trace) {
            std::size_t piece = 0;
            std::size_t next = 0;
            for (std::size_t i = 0; i < text.size(); ++i) {
                const std::size_t n = tokenizer.word_pieces(text.words[i]).size();
                if (next < idx.size() && idx[next] == i) {
                    trace->masked_spans.push_back({i, piece, piece + n, pass});
                    ++next;
                }
                piece += n;
            }
        }
        text = infill(std::move(masked), gen, trace, pass);
    }
    return text;
}

// ---- toy masked LM ----

namespace {

std::uint64_t pack(std::size_t a, std::size_t b) { return (static_cast<std::uint64_t>(a) << 32) | b; }

}  // namespace

ToyMaskedLM::ToyMaskedLM(const std::vector<std::vector<std::string>>& sentences, ToyMlmConfig cfg) : cfg_(cfg) {
    if (!(cfg_.alpha > 0.0)) throw PreconditionError("smoothing alpha must be positive");
    std::set<std::string> words;
    for (const auto& s : sentences) words.insert(s.begin(), s.end());
    if (words.empty()) throw EmptyCorpusError();
    vocab_.assign(words.begin(), words.end());
    for (std::size_t i = 0; i < vocab_.size(); ++i) ids_[vocab_[i]] = i;
    const std::size_t bos = vocab_.size();
    const std::size_t eos = vocab_.size() + 1;
    ids_.emplace(std::string(kBos), bos);
    ids_.emplace(std::string(kEos), eos);
    context_types_ = vocab_.size() + 2;
    unigram_.assign(vocab_.size(), 0.0);
    cooc_total_.assign(vocab_.size(), 0.0);
    std::vector<std::size_t> ids;
    for (const auto& s : sentences) {
        ids.clear();
        for (const auto& w : s) ids.push_back(ids_.at(w));
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const std::size_t x = ids[i];
            unigram_[x] += 1.0;
            total_ += 1.0;
            left_[pack(i == 0 ? bos : ids[i - 1], x)] += 1.0;
            right_[pack(x, i + 1 == ids.size() ? eos : ids[i + 1])] += 1.0;
            for (std::size_t j = 0; j < ids.size(); ++j) {
                if (j == i) continue;
                cooc_[pack(x, ids[j])] += 1.0;
                cooc_total_[x] += 1.0;
            }
        }
    }
}

std::optional<std::size_t> ToyMaskedLM::id(const std::string& w) const {
    auto it = ids_.find(w);
    if (it == ids_.end()) return std::nullopt;
    return it->second;
}

double ToyMaskedLM::log_score(const std::string& word, const std::vector<std::string>& keys, std::size_t position,
                              const std::vector<bool>* ignore) const {
    if (position >= keys.size()) throw PreconditionError("position out of range");
    const auto x = id(word);
    const bool known = x && *x < vocab_.size();
    const double a = cfg_.alpha;
    const double v = static_cast<double>(vocab_.size());
    const double uni = known ? unigram_[*x] : 0.0;
    const double co_total = known ? cooc_total_[*x] : 0.0;
    auto count = [&](const std::unordered_map<std::uint64_t, double>& m, std::size_t p, std::size_t q) {
        auto it = m.find(pack(p, q));
        return it == m.end() ? 0.0 : it->second;
    };
    auto skip = [&](std::size_t j) { return ignore && (*ignore)[j]; };
    double s = std::log((uni + a) / (total_ + a * v));
    const double ctx = static_cast<double>(context_types_);
    // left neighbour
    std::optional<std::size_t> prev;
    if (position == 0) {
        prev = vocab_.size();
    } else if (!skip(position - 1)) {
        prev = id(keys[position - 1]);
    }
    if (prev) s += std::log(((known ? count(left_, *prev, *x) : 0.0) + a) / (uni + a * ctx));
    std::optional<std::size_t> next;
    if (position + 1 == keys.size()) {
        next = vocab_.size() + 1;
    } else if (!skip(position + 1)) {
        next = id(keys[position + 1]);
    }
    if (next) s += std::log(((known ? count(right_, *x, *next) : 0.0) + a) / (uni + a * ctx));
    for (std::size_t j = 0; j < keys.size(); ++j) {
        if (j == position || skip(j)) continue;
        const auto c = id(keys[j]);
        if (!c || *c >= vocab_.size()) continue;
        s += std::log(((known ? count(cooc_, *x, *c) : 0.0) + a) / (co_total + a * v));
    }
    return s;
}

std::vector<double> ToyMaskedLM::candidate_scores(const std::vector<std::string>& keys, std::size_t position,
                                                  const std::vector<bool>* ignore) const {
    std::vector<double> out(vocab_.size());
    for (std::size_t i = 0; i < vocab_.size(); ++i) out[i] = log_score(vocab_[i], keys, position, ignore);
    return out;
}

std::vector<double> ToyDiscriminator::score(const std::vector<std::string>& keys) const {
    std::vector<double> out(keys.size());
    for (std::size_t i = 0; i < keys.size(); ++i) {
        const auto cands = lm_->candidate_scores(keys, i);
        const double best = *std::ranges::max_element(cands);
        out[i] = std::min(1.0, std::exp(lm_->log_score(keys[i], keys, i) - best));
    }
    return out;
}

std::vector<std::string> ToyInfiller::fill(const MaskedText& masked, std::size_t word_index) const {
    std::vector<std::string> keys;
    std::vector<bool> ignore;
    for (const auto& w : masked.words) {
        keys.push_back(w.masked ? std::string(kMaskToken) : case_fold(join_word(masked.pieces, w.piece_begin, w.piece_end)));
        ignore.push_back(w.masked);
    }
    const auto scores = lm_->candidate_scores(keys, word_index, &ignore);
    // max_element returns the first maximum: vocabulary order breaks ties.
    const auto best = static_cast<std::size_t>(std::ranges::max_element(scores) - scores.begin());
    const std::string word = apply_case(lm_->vocabulary()[best], masked.words[word_index].original);
    return tokenizer_.word_pieces(word);
}

std::vector<std::vector<std::string>> corpus_sentences(const TokenizedCorpus& corpus) {
    std::vector<std::vector<std::string>> out;
    for (const auto& d : corpus.documents) {
        std::vector<std::string> s;
        for (const auto& t : d.tokens) s.push_back(t.key);
        if (!s.empty()) out.push_back(std::move(s));
    }
    return out;
}

std::unique_ptr<DiscriminatorBackend> make_discriminator(const std::string& spec,
                                                         std::shared_ptr<const ToyMaskedLM> lm) {
    if (spec == "toy") return std::make_unique<ToyDiscriminator>(std::move(lm));
    if (spec.starts_with("pretrained:")) {
        throw BackendError("discriminator backend '" + spec + "' is not available in this build; use 'toy'");
    }
    throw PreconditionError("unknown discriminator backend '" + spec + "'");
}

std::unique_ptr<InfillerBackend> make_infiller(const std::string& spec, std::shared_ptr<const ToyMaskedLM> lm,
                                               const Tokenizer& tokenizer) {
    if (spec == "toy") return std::make_unique<ToyInfiller>(std::move(lm), tokenizer);
    if (spec.starts_with("pretrained:")) {
        throw BackendError("infiller backend '" + spec + "' is not available in this build; use 'toy'");
    }
    throw PreconditionError("unknown infiller backend '" + spec + "'");
}

// ---- parallel corpus ----

nlohmann::ordered_json ParallelRecord::to_json() const {
    nlohmann::ordered_json j;
    j["id"] = id;
    j["src"] = src;
    j["tgt"] = tgt;
    j["noop"] = noop;
    j["trace"] = trace.to_json();
    return j;
}

ParallelRecord ParallelRecord::from_json(const nlohmann::json& j) {
    ParallelRecord r;
    r.id = j.value("id", std::string());
    r.src = j.at("src");
    r.tgt = j.at("tgt");
    r.noop = j.value("noop", false);
    if (j.contains("trace")) r.trace = RewriteTrace::from_json(j.at("trace"));
    return r;
}

std::vector<ParallelRecord> build_parallel_corpus(const TokenizedCorpus& corpus, const WordPairDictionary& dict,
                                                  const DiscriminatorBackend& disc, const InfillerBackend& gen,
                                                  const ParallelCorpusConfig& cfg, kernels::Exec exec) {
    validate(cfg.correction);
    std::vector<ParallelRecord> all(corpus.documents.size());
    kernels::parallel_for(
        corpus.documents.size(),
        [&](std::size_t i) {
            const Document& doc = corpus.documents[i];
            ParallelRecord& r = all[i];
            r.id = doc.id;
            r.src = doc.text;
            WorkingText t = substitute(doc, dict, &r.trace);
            r.noop = r.trace.substitutions.empty();
            if (r.noop) {
                r.trace.flags.push_back("noop: no dictionary word");
            } else if (cfg.correction.enabled) {
                try {
                    t = correct(std::move(t), corpus.tokenizer, disc, gen, cfg.correction, &r.trace);
                } catch (const Error& e) {
                    t = substitute(doc, dict);
                    r.trace.masked_spans.clear();
                    r.trace.infills.clear();
                    r.trace.flags.push_back(std::string("correction skipped: ") + e.what());
                }
            }
            r.tgt = t.text();
        },
        exec);
    if (cfg.include_noop) return all;
    std::vector<ParallelRecord> out;
    for (auto& r : all) {
        if (!r.noop) out.push_back(std::move(r));
    }
    return out;
}

std::string parallel_to_jsonl(const std::vector<ParallelRecord>& records) {
    std::string out;
    for (const auto& r : records) out += r.to_json().dump() + "\n";
    return out;
}

std::vector<ParallelRecord> parallel_from_jsonl(const std::string& text) {
    std::vector<ParallelRecord> out;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            out.push_back(ParallelRecord::from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("bad parallel record: ") + e.what(), line_no);
        }
    }
    return out;
}

}  // namespace fairflow
