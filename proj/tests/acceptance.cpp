// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 when any
// gating criterion fails.

#include "fairflow/counterfactual.hpp"
#include "fairflow/dictionary.hpp"
#include "fairflow/errors.hpp"
#include "fairflow/eval.hpp"
#include "fairflow/fixtures.hpp"
#include "fairflow/flow.hpp"
#include "fairflow/generator.hpp"
#include "fairflow/io.hpp"
#include "fairflow/pipeline.hpp"
#include "fairflow/rewrite.hpp"
#include "fairflow/subspace.hpp"
#include "test_support.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>

using namespace fairflow;
namespace fx = fairflow::fixtures;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int precision = 4) {
    std::ostringstream out;
    out.precision(precision);
    out << v;
    return out.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const Tokenizer& fixture_tokenizer() {
    static const Tokenizer tok(fx::fixture_vocabulary());
    return tok;
}

Document doc_of(const std::string& text) { return tokenize_document({"d", text, {}, {}}, fixture_tokenizer()); }

FlowModel random_flow(std::size_t d, std::size_t k, std::size_t depth, std::uint64_t seed) {
    FlowArchitecture arch;
    arch.dim = d;
    arch.depth = depth;
    arch.seed = seed;
    FlowModel m(arch, k);
    std::mt19937_64 rng(seed + 100);
    for (auto* p : m.parameters()) p->value = testing::random_matrix(p->value.rows(), p->value.cols(), rng, 0.4);
    return m;
}

Matrix rows_matrix(const std::vector<std::vector<double>>& rows) {
    Matrix m(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
    }
    return m;
}

// ---- 1 ---------------------------------------------------------------------

Outcome flow_invertibility() {
    const auto m = random_flow(16, 4, 6, 1);
    std::mt19937_64 rng(1);
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const auto z = testing::random_vector(16, rng);
        const auto back = m.inverse(m.forward(z).z_tilde);
        for (std::size_t j = 0; j < z.size(); ++j) worst = std::max(worst, std::abs(back[j] - z[j]));
    }
    const double t = seconds_since(t0);
    return {worst < 1e-5 && t < 10.0, "max |T^-1(T(z)) - z| = " + fmt(worst) + ", " + fmt(t, 3) + " s"};
}

// ---- 2 ---------------------------------------------------------------------

Outcome change_of_variables() {
    const auto m = random_flow(4, 1, 6, 2);
    std::mt19937_64 rng(2);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto z = testing::random_vector(4, rng);
        std::vector<std::vector<double>> jac(4, std::vector<double>(4));
        const double h = 1e-6;
        for (std::size_t j = 0; j < 4; ++j) {
            auto up = z, down = z;
            up[j] += h;
            down[j] -= h;
            const auto fu = m.forward(up).z_tilde, fd = m.forward(down).z_tilde;
            for (std::size_t i = 0; i < 4; ++i) jac[i][j] = (fu[i] - fd[i]) / (2 * h);
        }
        worst = std::max(worst, std::abs(testing::log_abs_det(jac) - m.forward(z).log_det));
    }
    FlowArchitecture arch;
    arch.dim = 4;
    const double ll = FlowModel(arch, 1).log_likelihood(std::vector<double>(4, 0.0));
    const double expected = -2.0 * std::log(2.0 * std::numbers::pi);
    const double ll_err = std::abs(ll - expected);
    return {worst < 1e-4 && ll_err < 1e-6,
            "max log-det error " + fmt(worst) + ", identity log p(0) error " + fmt(ll_err)};
}

// ---- 3 ---------------------------------------------------------------------

Outcome pair_loss_gradients() {
    auto m = random_flow(8, 2, 2, 3);
    std::mt19937_64 rng(3);
    std::vector<std::vector<double>> a, b;
    for (int i = 0; i < 6; ++i) {
        a.push_back(testing::random_vector(8, rng));
        b.push_back(testing::random_vector(8, rng));
    }
    const Matrix ma = rows_matrix(a), mb = rows_matrix(b);
    const auto res = testing::check_gradients(m.parameters(), [&](nn::Graph& g) { return pair_loss(g, m, ma, mb, 0.9); });
    return {res.max_rel_error < 1e-3,
            "max relative error " + fmt(res.max_rel_error) + " over " + std::to_string(res.checked) + " parameters"};
}

// ---- 4 ---------------------------------------------------------------------

Outcome disentanglement() {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t d = 6, k = 1;
    const auto fixture = fx::attribute_direction(d, 2000, 1000, 5);
    FlowArchitecture arch;
    arch.dim = d;
    FlowTrainConfig cfg;
    cfg.epochs = 150;
    cfg.learning_rate = 1e-3;
    const auto flow = train_flow(fixture.train, k, arch, cfg);

    auto split = [&](const LabeledVectors& lv, bool in_k, std::vector<std::vector<double>>& x, std::vector<int>& y) {
        for (std::size_t i = 0; i < lv.vectors.size(); ++i) {
            const auto zt = flow.forward(lv.vectors[i]).z_tilde;
            std::vector<double> part;
            for (std::size_t j = 0; j < d; ++j) {
                if ((j < k) == in_k) part.push_back(zt[j]);
            }
            x.push_back(std::move(part));
            y.push_back(lv.groups[i] == Group::a);
        }
    };
    double probe[2];
    for (int in_k = 0; in_k < 2; ++in_k) {
        std::vector<std::vector<double>> xtr, xte;
        std::vector<int> ytr, yte;
        split(fixture.train, in_k == 1, xtr, ytr);
        split(fixture.test, in_k == 1, xte, yte);
        probe[in_k] = testing::linear_probe_accuracy(xtr, ytr, xte, yte);
    }

    std::vector<std::vector<double>> xa, xb;
    for (std::size_t i = 0; i < fixture.train.vectors.size(); ++i) {
        (fixture.train.groups[i] == Group::a ? xa : xb).push_back(fixture.train.vectors[i]);
    }
    const auto h = train_binary_classifier(xa, xb, ClassifierTrainConfig{});
    std::size_t flipped = 0;
    for (std::size_t i = 0; i < fixture.test.vectors.size(); ++i) {
        const Group g = fixture.test.groups[i];
        flipped += h.predict(counterfactual_embedding(flow, fixture.test.vectors[i], other(g))) == other(g);
    }
    const double flip = static_cast<double>(flipped) / static_cast<double>(fixture.test.vectors.size());
    const double t = seconds_since(t0);
    return {probe[1] >= 0.95 && probe[0] <= 0.6 && flip >= 0.9 && t < 300.0,
            "d=6, probe K " + fmt(probe[1], 3) + ", probe D\\K " + fmt(probe[0], 3) + ", K-swap flips " +
                fmt(flip, 3) + ", " + fmt(t, 3) + " s"};
}

// ---- 5 ---------------------------------------------------------------------

Outcome dictionary_discovery() {
    const auto corpus = make_corpus(fx::planted_vocabulary_corpus(400, 11), {});
    ToyBackendConfig tc;
    tc.dim = 32;
    const ToyBackend backend(tc, fx::planted_lexicon());
    DiscoveryConfig dc;
    dc.threshold_phi = 0.9;
    const PromptPair prompt("she", "he");
    auto [za, zb] = collect_prompt_embeddings(corpus, backend, prompt, dc);
    const auto h = train_subspace_classifier(za, zb, ClassifierTrainConfig{});
    const auto vocab = embed_vocabulary(corpus, backend, dc);
    const auto discovered =
        select_attribute_words(score_words(h, vocab), dc, &prompt, h.meta().held_out_accuracy);

    // Brute-force oracle: classify every instance of every word directly.
    std::set<std::string> oracle_a, oracle_b;
    for (const auto& [word, list] : vocab) {
        for (const auto& e : list) {
            const auto [pa, pb] = h.classify(e);
            if (pa > dc.threshold_phi) oracle_a.insert(word);
            if (pb > dc.threshold_phi) oracle_b.insert(word);
        }
    }
    if (h.meta().held_out_accuracy > dc.threshold_phi) {
        oracle_a.insert(prompt.word_a);
        oracle_b.insert(prompt.word_b);
    }
    const bool oracle_ok = oracle_a == discovered.set_a && oracle_b == discovered.set_b;

    FlowArchitecture arch;
    arch.dim = tc.dim;
    FlowTrainConfig fc;
    fc.noise_std = 0.2;
    const auto data = attribute_instances(vocab, discovered, h, dc.threshold_phi);
    const auto est = estimate_k(data, arch, fc);
    const auto flow = train_flow(data, est.k, arch, fc);
    const auto table = build_vocabulary_table(vocab);
    const auto pairs = generate_word_pairs(vocab, discovered, flow, table);
    const auto reference = generate_word_pairs_reference(vocab, discovered, flow, table);
    const bool decode_ok = pair_candidates_tsv(pairs) == pair_candidates_tsv(reference);
    const auto ambiguous = ambiguous_words(discovered);
    const auto assembled = assemble(prompt, pairs, 0.5, &ambiguous);

    std::size_t hits = 0;
    const auto entries = assembled.dictionary.entries();
    for (const auto& e : entries) {
        for (const auto& p : fx::planted_pairs()) hits += e.word_a == p.word_a && e.word_b == p.word_b;
    }
    const double recall = static_cast<double>(hits) / static_cast<double>(fx::planted_pairs().size());
    const double precision = entries.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(entries.size());
    return {recall == 1.0 && precision >= 0.75 && oracle_ok && decode_ok,
            "recall " + fmt(recall, 3) + ", precision " + fmt(precision, 3) + " (" + std::to_string(entries.size()) +
                " pairs, k=" + std::to_string(est.k) + "), discovery oracle " + (oracle_ok ? "match" : "MISMATCH") +
                ", decoding oracle " + (decode_ok ? "match" : "MISMATCH")};
}

// ---- 6 ---------------------------------------------------------------------

WordPairDictionary grammar_dictionary() {
    WordPairDictionary dict;
    for (auto slot : {fx::Slot::pron, fx::Slot::poss, fx::Slot::refl, fx::Slot::noun}) {
        const auto& a = fx::slot_words(slot, Group::a);
        const auto& b = fx::slot_words(slot, Group::b);
        for (std::size_t i = 0; i < a.size(); ++i) dict.add({a[i], b[i], PairSource::prompt, {}, {}});
    }
    const auto& na = fx::fixture_names(Group::a);
    const auto& nb = fx::fixture_names(Group::b);
    for (std::size_t i = 0; i < na.size(); ++i) dict.add({na[i].name, nb[i].name, PairSource::name, {}, {}});
    return dict;
}

Outcome substitution() {
    const auto dict = grammar_dictionary();
    std::size_t involution_ok = 0;
    const auto sentences = fx::grammar_corpus(500, 9);
    for (const auto& s : sentences) {
        const auto once = substitute(doc_of(s.text), dict).text();
        involution_ok += substitute(doc_of(once), dict).text() == s.text;
    }
    WordPairDictionary she_he;
    she_he.add({"she", "he", PairSource::prompt, {}, {}});
    const bool nurse = substitute(doc_of("She is a nurse"), she_he).text() == "He is a nurse";
    const bool casing = substitute(doc_of("she said"), she_he).text() == "he said" &&
                        substitute(doc_of("She said"), she_he).text() == "He said" &&
                        substitute(doc_of("SHE said"), she_he).text() == "HE said";
    return {involution_ok == sentences.size() && nurse && casing,
            "involution " + std::to_string(involution_ok) + "/" + std::to_string(sentences.size()) +
                ", nurse case " + (nurse ? "exact" : "WRONG") + ", casing " + (casing ? "kept" : "LOST")};
}

// ---- 7 ---------------------------------------------------------------------

Outcome masking() {
    const auto masked = mask_subtoken_groups(doc_of("The men are duchesses"), {3});
    const bool exact = masked.pieces == std::vector<std::string>{"The", "men", "are", "<mask>"} &&
                       masked.text() == "The men are <mask>";
    std::mt19937_64 rng(7);
    std::size_t dangling = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto s = fx::sample_sentence(rng);
        auto c = fx::corrupt_agreement(s, rng);
        const std::string text = c ? c->text : s.text;
        const auto doc = doc_of(text + " duchesses nurses");
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < doc.tokens.size(); ++i) {
            if (rng() % 4 == 0 || (c && i == c->word_index)) idx.push_back(i);
        }
        const auto m = mask_subtoken_groups(doc, idx);
        for (std::size_t p = 0; p + 1 < m.pieces.size(); ++p) {
            if (m.pieces[p] == kMaskToken && is_continuation(m.pieces[p + 1])) ++dangling;
        }
        // Every unmasked word keeps its whole piece group.
        for (std::size_t w = 0; w < m.words.size(); ++w) {
            if (!m.words[w].masked && m.words[w].piece_end - m.words[w].piece_begin != doc.tokens[w].subtoken_count()) {
                ++dangling;
            }
        }
        if (m.mask_count() != idx.size()) ++dangling;
    }
    return {exact && dangling == 0, std::string("duchesses ") + (exact ? "bit-exact" : "MISMATCH") +
                                        ", dangling continuation pieces " + std::to_string(dangling) + " in 1000 trials"};
}

// ---- 8 ---------------------------------------------------------------------

Outcome error_correction() {
    std::vector<RawDocument> raws;
    const auto train = fx::grammar_corpus(3000, 1);
    for (std::size_t i = 0; i < train.size(); ++i) raws.push_back({std::to_string(i), train[i].text, {}, {}});
    const auto corpus = make_corpus(std::move(raws), fixture_tokenizer());
    const auto lm = std::make_shared<const ToyMaskedLM>(corpus_sentences(corpus), ToyMlmConfig{});
    const ToyDiscriminator disc(lm);
    const ToyInfiller gen(lm, fixture_tokenizer());
    const CorrectionConfig cfg;

    std::mt19937_64 rng(5);
    std::size_t total = 0, restored = 0, position = 0;
    while (total < 1000) {
        const auto s = fx::sample_sentence(rng);
        const auto c = fx::corrupt_agreement(s, rng);
        if (!c) continue;
        ++total;
        const auto out = correct(WorkingText::from_document(doc_of(c->text)), fixture_tokenizer(), disc, gen, cfg, nullptr);
        const bool ok = fx::in_grammar(out.text());
        restored += ok;
        for (std::size_t i = 0; i < out.size(); ++i) {
            if (ok && out.origin[i] == c->word_index && case_fold(out.words[i]) == case_fold(c->original)) {
                ++position;
                break;
            }
        }
    }

    WordPairDictionary dict;
    dict.add({"she", "he", PairSource::prompt, {}, {}});
    dict.add({"her", "his", PairSource::prompt, {}, {}});
    std::size_t violations = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto s = fx::sample_sentence(rng);
        RewriteTrace trace;
        const auto sub = substitute(doc_of(s.text), dict, &trace);
        const auto out = correct(sub, fixture_tokenizer(), disc, gen, cfg, &trace);
        for (const auto& rec : trace.substitutions) {
            bool kept = false;
            for (std::size_t i = 0; i < out.size(); ++i) {
                kept = kept || (out.origin[i] == rec.token_index && out.words[i] == rec.replacement);
            }
            violations += !kept;
        }
    }
    const double rate = static_cast<double>(restored) / static_cast<double>(total);
    return {rate >= 0.9 && violations == 0,
            "grammatical after correction " + std::to_string(restored) + "/" + std::to_string(total) +
                " (corrupted word itself restored in " + std::to_string(position) + "), protected reverts " +
                std::to_string(violations) + "/1000 trials"};
}

// ---- 9 ---------------------------------------------------------------------

Outcome generator() {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<TextPair> pairs;
    for (const auto& p : fx::template_pairs(200, 3)) pairs.push_back({p.source, p.target});

    const auto init = make_generator(pairs);
    const double log_v = std::log(static_cast<double>(init.vocabulary().size()));
    double worst_dev = 0.0;
    for (const auto& p : pairs) {
        const double steps = static_cast<double>(init.vocabulary().encode(p.target).size() + 1);
        worst_dev = std::max(worst_dev, std::abs(init.teacher_forcing_loss(p) / steps - log_v) / log_v);
    }

    GeneratorTrainConfig cfg;
    cfg.epochs = 15;
    const auto trained = finetune(make_generator(pairs), pairs, cfg);
    const double em = exact_match(trained, pairs);

    GeneratorArchitecture tiny;
    tiny.width = 8;
    tiny.heads = 2;
    tiny.max_length = 16;
    std::vector<TextPair> few(pairs.begin(), pairs.begin() + 3);
    auto small = make_generator(few, tiny);
    std::vector<std::vector<std::size_t>> srcs, tgts;
    for (const auto& p : few) {
        srcs.push_back(small.vocabulary().encode(p.source));
        tgts.push_back(small.vocabulary().encode(p.target));
    }
    const auto grad = testing::check_gradients(small.parameters(), [&](nn::Graph& g) { return small.batch_loss(g, srcs, tgts); });
    const double t = seconds_since(t0);
    return {worst_dev <= 0.2 && em >= 0.9 && grad.max_rel_error < 1e-3 && t < 600.0,
            "init per-token loss within " + fmt(100.0 * worst_dev, 3) + "% of log|V|, exact match " + fmt(em, 3) +
                ", gradient error " + fmt(grad.max_rel_error) + ", " + fmt(t, 3) + " s"};
}

// ---- 10 --------------------------------------------------------------------

Outcome metrics() {
    std::mt19937_64 rng(10);
    std::vector<int> p, y;
    std::vector<Group> g;
    for (int i = 0; i < 1000; ++i) {
        p.push_back(static_cast<int>(rng() % 2));
        y.push_back(static_cast<int>(rng() % 2));
        g.push_back(rng() % 3 == 0 ? Group::b : Group::a);
    }
    const auto r = tprd_fprd(p, y, g);
    long long tp[2] = {0, 0}, pos[2] = {0, 0}, fp[2] = {0, 0}, neg[2] = {0, 0};
    long long correct = 0, tpa = 0, fpa = 0, fna = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const int k = g[i] == Group::a ? 0 : 1;
        if (y[i] == 1) {
            ++pos[k];
            tp[k] += p[i] == 1;
        } else {
            ++neg[k];
            fp[k] += p[i] == 1;
        }
        correct += p[i] == y[i];
        tpa += p[i] && y[i];
        fpa += p[i] && !y[i];
        fna += !p[i] && y[i];
    }
    const bool tprd_ok = static_cast<long long>(r.tprd.num) * pos[0] * pos[1] ==
                         std::llabs(tp[0] * pos[1] - tp[1] * pos[0]) * static_cast<long long>(r.tprd.den);
    const bool fprd_ok = static_cast<long long>(r.fprd.num) * neg[0] * neg[1] ==
                         std::llabs(fp[0] * neg[1] - fp[1] * neg[0]) * static_cast<long long>(r.fprd.den);
    const bool acc_ok = r.accuracy == static_cast<double>(correct) / 1000.0;
    const bool f1_ok = r.f1 == static_cast<double>(2 * tpa) / static_cast<double>(2 * tpa + fpa + fna);

    // Equal rates in both groups: 7/10 positives and 2/10 negatives predicted 1.
    std::vector<int> ep, ey;
    std::vector<Group> eg;
    for (Group grp : {Group::a, Group::b}) {
        for (int i = 0; i < 10; ++i) {
            ep.push_back(i < 7);
            ey.push_back(1);
            eg.push_back(grp);
            ep.push_back(i < 2);
            ey.push_back(0);
            eg.push_back(grp);
        }
    }
    const auto eq = tprd_fprd(ep, ey, eg);
    const bool zero_ok = eq.tprd.num == 0 && eq.fprd.num == 0;

    const auto train = fx::grammar_corpus(600, 12, 0.0);
    std::vector<std::string> texts;
    std::vector<Group> groups;
    for (const auto& s : train) {
        texts.push_back(s.text);
        groups.push_back(*s.group);
    }
    auto backend = std::make_shared<const ToyBackend>(ToyBackendConfig{}, fx::grammar_lexicon());
    const auto clf = PooledEmbeddingClassifier::train(texts, groups, backend, fixture_tokenizer(), ClassifierTrainConfig{});
    std::vector<std::string> held;
    std::vector<Group> held_groups;
    for (const auto& s : fx::grammar_corpus(200, 13, 0.0)) {
        held.push_back(s.text);
        held_groups.push_back(*s.group);
    }
    const double identity_transfer = transfer_accuracy(held_groups, held, clf);

    double worst_ppl = 0.0;
    for (std::size_t v : {2u, 50u, 997u}) {
        const double ppl = perplexity({"a b c", "d e f g", "h"}, UniformLM(v)).perplexity;
        worst_ppl = std::max(worst_ppl, std::abs(ppl - static_cast<double>(v)) / static_cast<double>(v));
    }
    const bool ppl_ok = worst_ppl <= 1e-9;
    return {tprd_ok && fprd_ok && acc_ok && f1_ok && zero_ok && identity_transfer <= 0.05 && ppl_ok,
            std::string("recount ") + (tprd_ok && fprd_ok && acc_ok && f1_ok ? "exact" : "MISMATCH") +
                ", equal-rate TPRD " + fmt(eq.tprd.value()) + ", identity transfer " + fmt(identity_transfer, 3) +
                ", uniform PPL relative error " + fmt(worst_ppl)};
}

// ---- 11 --------------------------------------------------------------------

Outcome table_sampler() {
    std::vector<RawDocument> pool;
    for (int label : {0, 1}) {
        for (Group grp : {Group::a, Group::b}) {
            for (int i = 0; i < 9000; ++i) pool.push_back({std::to_string(pool.size()), "text", label, grp});
        }
    }
    const BiasSampleSpec spec{18000, 0.5, 0.12, {}, 1};
    const auto sample = induce_bias_sample(pool, spec);
    const auto tally = tally_cells(sample);
    const std::size_t positives = tally.female_positive + tally.male_positive;
    const std::size_t negatives = tally.female_negative + tally.male_negative;
    return {positives == 9000 && negatives == 9000 && tally.female_positive == 1080 && tally == bias_cell_counts(spec),
            "positives " + std::to_string(positives) + ", negatives " + std::to_string(negatives) +
                ", females among positives " + std::to_string(tally.female_positive)};
}

// ---- 12 --------------------------------------------------------------------

int run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string("\"") + FAIRFLOW_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    return std::system(cmd.c_str());
}

bool same_tree(const fs::path& x, const fs::path& y, std::string& diff) {
    std::set<std::string> files;
    for (const auto& root : {x, y}) {
        for (const auto& e : fs::recursive_directory_iterator(root)) {
            if (e.is_regular_file()) files.insert(fs::relative(e.path(), root).string());
        }
    }
    for (const auto& f : files) {
        if (!fs::exists(x / f) || !fs::exists(y / f) || io::read_file(x / f) != io::read_file(y / f)) {
            diff = f;
            return false;
        }
    }
    return !files.empty();
}

double report_perplexity(const fs::path& artifacts) {
    const auto j = nlohmann::json::parse(io::read_file(artifacts / "evaluate" / "report.json"));
    return j.at("metrics").at("perplexity").at("perplexity").get<double>();
}

Outcome end_to_end() {
    const auto dir = testing::temp_dir("acceptance-e2e");
    const std::string config = std::string("--config \"") + FAIRFLOW_FIXTURE_DIR + "/config.json\"";
    const auto t0 = std::chrono::steady_clock::now();
    const int rc1 = run_cli("run-all " + config + " --artifacts \"" + (dir / "run1").string() + "\"", dir / "run1.log");
    const double t = seconds_since(t0);
    const int rc2 = run_cli("run-all " + config + " --artifacts \"" + (dir / "run2").string() + "\"", dir / "run2.log");
    const int rc3 = run_cli("run-all " + config + " --no-correction --artifacts \"" + (dir / "ablation").string() + "\"",
                            dir / "ablation.log");
    if (rc1 != 0 || rc2 != 0 || rc3 != 0) {
        return {false, "pipeline exited non-zero (" + std::to_string(rc1) + ", " + std::to_string(rc2) + ", " +
                           std::to_string(rc3) + "); logs in " + dir.string()};
    }
    std::string diff;
    const bool identical = same_tree(dir / "run1", dir / "run2", diff);
    std::size_t stages = 0;
    for (const auto s : all_stages()) stages += fs::exists(dir / "run1" / stage_name(s));
    const double corrected = report_perplexity(dir / "run1");
    const double ablated = report_perplexity(dir / "ablation");
    return {identical && stages == 7 && ablated > corrected && t < 1200.0,
            std::to_string(stages) + "/7 stages in " + fmt(t, 3) + " s, reruns " +
                (identical ? "byte-identical" : "DIFFER at " + diff) + ", PPL corrected " + fmt(corrected) +
                " vs no-correction " + fmt(ablated)};
}

}  // namespace

int main() {
    struct Criterion {
        int id;
        const char* name;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria = {
        {1, "flow invertibility", flow_invertibility},
        {2, "change-of-variables log-likelihood", change_of_variables},
        {3, "pair objective gradient check", pair_loss_gradients},
        {4, "disentanglement fixture", disentanglement},
        {5, "dictionary discovery", dictionary_discovery},
        {6, "substitution correctness", substitution},
        {7, "masking scheme", masking},
        {8, "error-correction fixture", error_correction},
        {9, "generator", generator},
        {10, "metrics exactness", metrics},
        {11, "bias sampler cell counts", table_sampler},
        {12, "end-to-end pipeline", end_to_end},
    };
    int failures = 0;
    for (const auto& c : criteria) {
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        std::printf("criterion %2d %-36s %s  %s\n", c.id, c.name, o.pass ? "PASS" : "FAIL", o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("criterion 13 %-36s SKIP  non-gating; needs user-supplied pretrained backends\n",
                "pretrained directional check");
    std::printf("%d of %zu gating criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
