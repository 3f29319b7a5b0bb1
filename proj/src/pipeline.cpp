#include "fairflow/pipeline.hpp"

#include "fairflow/counterfactual.hpp"
#include "fairflow/dictionary.hpp"
#include "fairflow/errors.hpp"
#include "fairflow/eval.hpp"
#include "fairflow/fixtures.hpp"
#include "fairflow/io.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <map>
#include <sstream>

namespace fairflow {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

const std::vector<Stage>& all_stages() {
    static const std::vector<Stage> s = {Stage::discover,        Stage::train_flow,      Stage::build_dict,
                                         Stage::build_parallel,  Stage::train_generator, Stage::generate,
                                         Stage::evaluate};
    return s;
}

const char* stage_name(Stage s) {
    switch (s) {
        case Stage::discover: return "discover";
        case Stage::train_flow: return "train-flow";
        case Stage::build_dict: return "build-dict";
        case Stage::build_parallel: return "build-parallel";
        case Stage::train_generator: return "train-generator";
        case Stage::generate: return "generate";
        case Stage::evaluate: return "evaluate";
    }
    return "?";
}

std::optional<Stage> parse_stage(std::string_view s) {
    for (Stage st : all_stages()) {
        if (s == stage_name(st)) return st;
    }
    return std::nullopt;
}

// ---- config ----

namespace {

template <class T>
void read(const nlohmann::json& j, const char* key, T& out) {
    if (!j.contains(key) || j.at(key).is_null()) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw PreconditionError(std::string("config key '") + key + "': " + e.what());
    }
}

const nlohmann::json& section(const nlohmann::json& j, const char* key) {
    static const nlohmann::json empty = nlohmann::json::object();
    if (!j.contains(key)) return empty;
    if (!j.at(key).is_object()) throw PreconditionError(std::string("config section '") + key + "' must be an object");
    return j.at(key);
}

fs::path resolve(const nlohmann::json& j, const char* key, const fs::path& base) {
    std::string s;
    read(j, key, s);
    if (s.empty()) return {};
    fs::path p(s);
    return p.is_absolute() ? p : base / p;
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j, const fs::path& base_dir) {
    if (!j.is_object()) throw PreconditionError("config must be a JSON object");
    PipelineConfig c;
    c.corpus = resolve(j, "corpus", base_dir);
    if (c.corpus.empty()) throw PreconditionError("config needs a 'corpus' path");
    std::string fmt = "jsonl";
    read(j, "corpus_format", fmt);
    c.corpus_format = parse_corpus_format(fmt);
    c.eval_corpus = resolve(j, "eval_corpus", base_dir);
    if (c.eval_corpus.empty()) c.eval_corpus = c.corpus;
    c.vocab = resolve(j, "vocab", base_dir);
    c.lexicon = resolve(j, "lexicon", base_dir);
    c.names_a = resolve(j, "names_a", base_dir);
    c.names_b = resolve(j, "names_b", base_dir);
    if (j.contains("prompt")) {
        const auto p = j.at("prompt").get<std::vector<std::string>>();
        if (p.size() != 2) throw PreconditionError("config 'prompt' must list two words");
        c.prompt_a = p[0];
        c.prompt_b = p[1];
    }
    read(j, "seed", c.seed);

    const auto& emb = section(j, "embedding");
    read(emb, "backend", c.embedding_backend);
    read(emb, "dim", c.toy.dim);
    read(emb, "seed", c.toy.seed);
    read(emb, "attribute_strength", c.toy.attribute_strength);
    read(emb, "context_weight", c.toy.context_weight);

    const auto& disc = section(j, "discovery");
    read(disc, "phi", c.discovery.threshold_phi);
    read(disc, "min_instance_count", c.discovery.min_instance_count);
    read(disc, "instance_cap", c.discovery.instance_cap);
    read(disc, "context_window", c.discovery.context_window);
    validate(c.discovery);

    const auto& clf = section(j, "classifier");
    read(clf, "max_epochs", c.classifier.max_epochs);
    read(clf, "batch_size", c.classifier.batch_size);
    read(clf, "learning_rate", c.classifier.learning_rate);
    read(clf, "weight_decay", c.classifier.weight_decay);
    read(clf, "patience", c.classifier.patience);
    read(clf, "hidden", c.classifier.hidden);

    const auto& flow = section(j, "flow");
    read(flow, "depth", c.flow_arch.depth);
    read(flow, "width", c.flow_arch.width);
    read(flow, "scale_bound", c.flow_arch.scale_bound);
    read(flow, "sigma", c.flow_train.sigma);
    read(flow, "epochs", c.flow_train.epochs);
    read(flow, "batch_size", c.flow_train.batch_size);
    read(flow, "learning_rate", c.flow_train.learning_rate);
    read(flow, "clip_norm", c.flow_train.clip_norm);
    read(flow, "noise_std", c.flow_train.noise_std);
    read(flow, "k_threshold", c.k_threshold);
    if (flow.contains("k") && !flow.at("k").is_null()) c.k = flow.at("k").get<std::size_t>();
    validate(c.flow_train);

    const auto& dict = section(j, "dictionary");
    read(dict, "min_votes", c.min_votes);
    if (!(c.min_votes >= 0.0 && c.min_votes <= 1.0)) throw PreconditionError("min_votes must lie in [0, 1]");

    const auto& corr = section(j, "correction");
    read(corr, "enabled", c.correction.enabled);
    read(corr, "theta", c.correction.theta);
    read(corr, "max_mask_fraction", c.correction.max_mask_fraction);
    read(corr, "protect_substituted", c.correction.protect_substituted);
    read(corr, "passes", c.correction.passes);
    read(corr, "discriminator", c.discriminator);
    read(corr, "infiller", c.infiller);
    read(corr, "mlm_alpha", c.mlm_alpha);
    read(corr, "include_noop", c.include_noop);
    validate(c.correction);

    const auto& gen = section(j, "generator");
    read(gen, "width", c.generator_arch.width);
    read(gen, "heads", c.generator_arch.heads);
    read(gen, "encoder_layers", c.generator_arch.encoder_layers);
    read(gen, "decoder_layers", c.generator_arch.decoder_layers);
    read(gen, "ffn_multiplier", c.generator_arch.ffn_multiplier);
    read(gen, "max_length", c.generator_arch.max_length);
    read(gen, "epochs", c.generator_train.epochs);
    read(gen, "batch_size", c.generator_train.batch_size);
    read(gen, "learning_rate", c.generator_train.learning_rate);
    read(gen, "clip_norm", c.generator_train.clip_norm);
    read(gen, "weight_decay", c.generator_train.weight_decay);

    read(section(j, "evaluate"), "lm", c.scoring_lm);
    c.apply_seed(c.seed);
    return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(io::read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw PreconditionError("cannot parse config " + path.string() + ": " + e.what());
    }
    return from_json(j, path.parent_path());
}

void PipelineConfig::apply_seed(std::uint64_t s) {
    seed = s;
    classifier.seed = s + 1;
    flow_arch.seed = s + 2;
    flow_train.seed = s + 3;
    generator_arch.seed = s + 4;
    generator_train.seed = s + 5;
}

// ---- per-stage configuration and hashing ----

ojson stage_config(Stage s, const PipelineConfig& c, const RunOptions& opt) {
    ojson j;
    j["stage"] = stage_name(s);
    j["seed"] = c.seed;
    auto embedding = [&] {
        return ojson{{"backend", c.embedding_backend},
                     {"dim", c.toy.dim},
                     {"seed", c.toy.seed},
                     {"attribute_strength", c.toy.attribute_strength},
                     {"context_weight", c.toy.context_weight}};
    };
    auto discovery = [&] {
        return ojson{{"phi", c.discovery.threshold_phi},
                     {"min_instance_count", c.discovery.min_instance_count},
                     {"instance_cap", c.discovery.instance_cap},
                     {"context_window", c.discovery.context_window}};
    };
    switch (s) {
        case Stage::discover:
            j["prompt"] = {c.prompt_a, c.prompt_b};
            j["embedding"] = embedding();
            j["discovery"] = discovery();
            j["classifier"] = {{"max_epochs", c.classifier.max_epochs},
                               {"batch_size", c.classifier.batch_size},
                               {"learning_rate", c.classifier.learning_rate},
                               {"weight_decay", c.classifier.weight_decay},
                               {"patience", c.classifier.patience},
                               {"hidden", c.classifier.hidden},
                               {"seed", c.classifier.seed}};
            break;
        case Stage::train_flow:
            j["embedding"] = embedding();
            j["discovery"] = discovery();
            j["flow"] = {{"depth", c.flow_arch.depth},
                         {"width", c.flow_arch.width},
                         {"scale_bound", c.flow_arch.scale_bound},
                         {"sigma", c.flow_train.sigma},
                         {"epochs", c.flow_train.epochs},
                         {"batch_size", c.flow_train.batch_size},
                         {"learning_rate", c.flow_train.learning_rate},
                         {"clip_norm", c.flow_train.clip_norm},
                         {"noise_std", c.flow_train.noise_std},
                         {"k", c.k ? ojson(*c.k) : ojson(nullptr)},
                         {"k_threshold", c.k_threshold},
                         {"arch_seed", c.flow_arch.seed},
                         {"train_seed", c.flow_train.seed}};
            break;
        case Stage::build_dict:
            j["prompt"] = {c.prompt_a, c.prompt_b};
            j["manual_dict"] = opt.manual_dict ? ojson(opt.manual_dict->filename().string()) : ojson(nullptr);
            j["embedding"] = embedding();
            j["discovery"] = discovery();
            j["min_votes"] = c.min_votes;
            break;
        case Stage::build_parallel:
            j["correction"] = {{"enabled", c.correction.enabled && !opt.no_correction},
                               {"theta", c.correction.theta},
                               {"max_mask_fraction", c.correction.max_mask_fraction},
                               {"protect_substituted", c.correction.protect_substituted},
                               {"passes", c.correction.passes},
                               {"discriminator", c.discriminator},
                               {"infiller", c.infiller},
                               {"mlm_alpha", c.mlm_alpha},
                               {"include_noop", c.include_noop}};
            break;
        case Stage::train_generator:
        case Stage::generate:
            j["generator"] = {{"width", c.generator_arch.width},
                              {"heads", c.generator_arch.heads},
                              {"encoder_layers", c.generator_arch.encoder_layers},
                              {"decoder_layers", c.generator_arch.decoder_layers},
                              {"ffn_multiplier", c.generator_arch.ffn_multiplier},
                              {"max_length", c.generator_arch.max_length},
                              {"epochs", c.generator_train.epochs},
                              {"batch_size", c.generator_train.batch_size},
                              {"learning_rate", c.generator_train.learning_rate},
                              {"clip_norm", c.generator_train.clip_norm},
                              {"weight_decay", c.generator_train.weight_decay},
                              {"arch_seed", c.generator_arch.seed},
                              {"train_seed", c.generator_train.seed}};
            break;
        case Stage::evaluate:
            j["lm"] = c.scoring_lm;
            j["embedding"] = embedding();
            j["classifier_seed"] = c.classifier.seed;
            break;
    }
    return j;
}

namespace {

// Inputs are named by role so that hashes do not depend on where the
// fixture lives on disk.
struct StageInputs {
    std::vector<std::pair<std::string, fs::path>> files;
};

std::string artifact_rel(Stage s, const std::string& file) { return std::string(stage_name(s)) + "/" + file; }

fs::path require_artifact(const RunOptions& opt, Stage producer, const std::string& file) {
    const fs::path p = opt.artifacts / stage_name(producer) / file;
    if (!fs::exists(p)) {
        throw PreconditionError("missing artifact " + artifact_rel(producer, file) + "; run `fairflow " +
                                stage_name(producer) + "` first");
    }
    return p;
}

StageInputs stage_inputs(Stage s, const PipelineConfig& c, const RunOptions& opt) {
    StageInputs in;
    auto ext = [&](const char* role, const fs::path& p) {
        if (p.empty()) return;
        if (!fs::exists(p)) throw PreconditionError(std::string(role) + " file not found: " + p.string());
        in.files.emplace_back(role, p);
    };
    auto up = [&](Stage producer, const std::string& file) {
        in.files.emplace_back(artifact_rel(producer, file), require_artifact(opt, producer, file));
    };
    switch (s) {
        case Stage::discover:
            ext("corpus", c.corpus);
            ext("vocab", c.vocab);
            ext("lexicon", c.lexicon);
            break;
        case Stage::train_flow:
            ext("corpus", c.corpus);
            ext("vocab", c.vocab);
            ext("lexicon", c.lexicon);
            up(Stage::discover, "classifier.bin");
            up(Stage::discover, "discovered.json");
            break;
        case Stage::build_dict:
            if (opt.manual_dict) {
                ext("manual_dict", *opt.manual_dict);
                break;
            }
            ext("corpus", c.corpus);
            ext("vocab", c.vocab);
            ext("lexicon", c.lexicon);
            ext("names_a", c.names_a);
            ext("names_b", c.names_b);
            up(Stage::discover, "discovered.json");
            up(Stage::train_flow, "flow.bin");
            break;
        case Stage::build_parallel:
            ext("corpus", c.corpus);
            ext("vocab", c.vocab);
            up(Stage::build_dict, "dictionary.tsv");
            break;
        case Stage::train_generator:
            up(Stage::build_parallel, "parallel.jsonl");
            break;
        case Stage::generate:
            ext("eval_corpus", c.eval_corpus);
            up(Stage::train_generator, "generator.bin");
            break;
        case Stage::evaluate:
            ext("corpus", c.corpus);
            ext("vocab", c.vocab);
            ext("lexicon", c.lexicon);
            up(Stage::generate, "generated.jsonl");
            break;
    }
    return in;
}

fs::path manifest_path(const RunOptions& opt) { return opt.artifacts / "manifest.json"; }

ojson read_manifest(const RunOptions& opt) {
    const auto p = manifest_path(opt);
    if (!fs::exists(p)) return ojson{{"version", 1}, {"stages", ojson::object()}};
    try {
        return ojson::parse(io::read_file(p));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error("manifest " + p.string() + " is corrupt: " + e.what());
    }
}

Tokenizer load_tokenizer(const PipelineConfig& c) {
    return c.vocab.empty() ? Tokenizer{} : Tokenizer::from_vocab_file(c.vocab);
}

AttributeLexicon load_lexicon(const PipelineConfig& c) {
    return c.lexicon.empty() ? AttributeLexicon{} : AttributeLexicon::load(c.lexicon);
}

// Output files of a stage, written together once the stage has finished.
using Outputs = std::vector<std::pair<std::string, std::string>>;

struct Context {
    const PipelineConfig& cfg;
    const RunOptions& opt;
    std::ostream& log;
};

std::unique_ptr<EmbeddingBackend> backend_of(const PipelineConfig& c) {
    return make_embedding_backend(c.embedding_backend, c.toy, load_lexicon(c));
}

DiscoveryResult read_discovered(const RunOptions& opt) {
    const auto j = nlohmann::json::parse(io::read_file(require_artifact(opt, Stage::discover, "discovered.json")));
    DiscoveryResult r;
    for (const auto& w : j.at("set_a")) r.set_a.insert(w.get<std::string>());
    for (const auto& w : j.at("set_b")) r.set_b.insert(w.get<std::string>());
    return r;
}

Outputs run_discover(const Context& ctx) {
    const auto& c = ctx.cfg;
    const auto corpus = load_corpus(c.corpus, c.corpus_format, load_tokenizer(c));
    const auto backend = backend_of(c);
    const PromptPair prompt(c.prompt_a, c.prompt_b);
    auto [set_a, set_b] = collect_prompt_embeddings(corpus, *backend, prompt, c.discovery);
    ctx.log << "prompt instances: " << set_a.embeddings.size() << " / " << set_b.embeddings.size() << "\n";
    const auto h = train_subspace_classifier(set_a, set_b, c.classifier);
    ctx.log << "classifier held-out accuracy: " << h.meta().held_out_accuracy << "\n";
    const auto vocab = embed_vocabulary(corpus, *backend, c.discovery);
    auto result = select_attribute_words(score_words(h, vocab), c.discovery, &prompt, h.meta().held_out_accuracy);
    ctx.log << "attribute words: " << result.set_a.size() << " / " << result.set_b.size() << "\n";
    ojson j;
    j["set_a"] = result.set_a;
    j["set_b"] = result.set_b;
    j["held_out_accuracy"] = h.meta().held_out_accuracy;
    j["phi"] = c.discovery.threshold_phi;
    return {{"classifier.bin", h.serialize()}, {"attribute_words.tsv", result.report_tsv()}, {"discovered.json", j.dump(2) + "\n"}};
}

Outputs run_train_flow(const Context& ctx) {
    const auto& c = ctx.cfg;
    const auto corpus = load_corpus(c.corpus, c.corpus_format, load_tokenizer(c));
    const auto backend = backend_of(c);
    const auto h = SubspaceClassifier::load(require_artifact(ctx.opt, Stage::discover, "classifier.bin"));
    const auto discovered = read_discovered(ctx.opt);
    const auto vocab = embed_vocabulary(corpus, *backend, c.discovery);
    const auto data = attribute_instances(vocab, discovered, h, c.discovery.threshold_phi);
    ctx.log << "flow training instances: " << data.vectors.size() << "\n";
    FlowArchitecture arch = c.flow_arch;
    arch.dim = backend->dim();
    ojson kj;
    std::size_t k = 0;
    std::string rule;
    if (c.k) {
        k = *c.k;
        rule = "user";
    } else {
        const auto est = estimate_k(data, arch, c.flow_train, c.k_threshold);
        k = est.k;
        rule = "variance-ratio";
        kj["ratios"] = est.ratios;
        kj["threshold"] = est.threshold;
    }
    ctx.log << "k = " << k << " (" << rule << ")\n";
    auto flow = train_flow(data, k, arch, c.flow_train);
    flow.k_rule = rule;
    kj["k"] = k;
    kj["rule"] = rule;
    kj["instances"] = data.vectors.size();
    kj["final_loss"] = flow.loss_history.empty() ? 0.0 : flow.loss_history.back();
    return {{"flow.bin", flow.serialize()}, {"k.json", kj.dump(2) + "\n"}};
}

Outputs run_build_dict(const Context& ctx) {
    const auto& c = ctx.cfg;
    if (ctx.opt.manual_dict) {
        const auto dict = WordPairDictionary::load(*ctx.opt.manual_dict);
        ctx.log << "manual dictionary: " << dict.size() << " pairs\n";
        return {{"pair_candidates.tsv", pair_candidates_tsv({})},
                {"dictionary.tsv", dict.to_tsv()},
                {"conflicts.log", ""}};
    }
    const auto corpus = load_corpus(c.corpus, c.corpus_format, load_tokenizer(c));
    const auto backend = backend_of(c);
    const auto discovered = read_discovered(ctx.opt);
    const auto flow = FlowModel::load(require_artifact(ctx.opt, Stage::train_flow, "flow.bin"));
    const auto vocab = embed_vocabulary(corpus, *backend, c.discovery);
    const auto table = build_vocabulary_table(vocab);
    const auto pairs = generate_word_pairs(vocab, discovered, flow, table);
    const auto ambiguous = ambiguous_words(discovered);
    auto assembled = assemble(PromptPair(c.prompt_a, c.prompt_b), pairs, c.min_votes, &ambiguous);
    std::string conflicts;
    for (const auto& line : assembled.conflicts) conflicts += line + "\n";
    for (const auto& d : assembled.dropped_below_threshold) {
        conflicts += "below threshold: " + d.word + " -> " + d.counterfactual + " (" + std::to_string(d.votes) + "/" +
                     std::to_string(d.total) + ")\n";
    }
    for (const auto& e : assembled.flagged_polysemous) {
        conflicts += "polysemous: " + e.word_a + " <-> " + e.word_b + "\n";
    }
    WordPairDictionary dict = std::move(assembled.dictionary);
    if (!c.names_a.empty() && !c.names_b.empty()) {
        WordPairDictionary names;
        for (auto& e : names_intervention(NameFrequencyList::load(c.names_a, Group::a),
                                          NameFrequencyList::load(c.names_b, Group::b))) {
            names.add(std::move(e));
        }
        auto merged = merge(dict, names);
        for (const auto& line : merged.conflicts) conflicts += line + "\n";
        dict = std::move(merged.dictionary);
    }
    ctx.log << "dictionary: " << dict.size() << " pairs\n";
    return {{"pair_candidates.tsv", pair_candidates_tsv(pairs)}, {"dictionary.tsv", dict.to_tsv()}, {"conflicts.log", conflicts}};
}

Outputs run_build_parallel(const Context& ctx) {
    const auto& c = ctx.cfg;
    const auto corpus = load_corpus(c.corpus, c.corpus_format, load_tokenizer(c));
    const auto dict = WordPairDictionary::load(require_artifact(ctx.opt, Stage::build_dict, "dictionary.tsv"));
    auto lm = std::make_shared<const ToyMaskedLM>(corpus_sentences(corpus), ToyMlmConfig{c.mlm_alpha});
    const auto disc = make_discriminator(c.discriminator, lm);
    const auto gen = make_infiller(c.infiller, lm, corpus.tokenizer);
    ParallelCorpusConfig pc;
    pc.correction = c.correction;
    pc.correction.enabled = c.correction.enabled && !ctx.opt.no_correction;
    pc.include_noop = c.include_noop;
    const auto records = build_parallel_corpus(corpus, dict, *disc, *gen, pc);
    std::size_t changed = 0, infilled = 0;
    for (const auto& r : records) {
        changed += !r.noop;
        infilled += r.trace.infills.size();
    }
    ctx.log << "parallel records: " << records.size() << " (" << changed << " rewritten, " << infilled
            << " infilled tokens, correction " << (pc.correction.enabled ? "on" : "off") << ")\n";
    return {{"parallel.jsonl", parallel_to_jsonl(records)}};
}

Outputs run_train_generator(const Context& ctx) {
    const auto& c = ctx.cfg;
    const auto records = parallel_from_jsonl(io::read_file(require_artifact(ctx.opt, Stage::build_parallel, "parallel.jsonl")));
    std::vector<TextPair> pairs;
    for (const auto& r : records) pairs.push_back({r.src, r.tgt});
    if (pairs.empty()) throw PreconditionError("parallel corpus is empty; nothing to train on");
    auto model = finetune(make_generator(pairs, c.generator_arch), pairs, c.generator_train);
    ctx.log << "generator: " << model.parameter_count() << " parameters, loss " << model.loss_history.front() << " -> "
            << model.loss_history.back() << "\n";
    ojson j;
    j["loss_history"] = model.loss_history;
    j["pairs"] = pairs.size();
    j["vocabulary"] = model.vocabulary().size();
    j["oov"] = model.oov_tally;
    j["training_exact_match"] = exact_match(model, pairs);
    return {{"generator.bin", model.serialize()}, {"training.json", j.dump(2) + "\n"}};
}

Outputs run_generate(const Context& ctx) {
    const auto& c = ctx.cfg;
    const auto model = Seq2SeqModel::load(require_artifact(ctx.opt, Stage::train_generator, "generator.bin"));
    const auto docs = read_raw_documents(c.eval_corpus, c.corpus_format);
    std::vector<std::string> outs(docs.size());
    kernels::parallel_for(docs.size(), [&](std::size_t i) { outs[i] = model.generate(docs[i].text); });
    std::string jsonl;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        ojson j;
        j["id"] = docs[i].id;
        j["text"] = docs[i].text;
        if (docs[i].group) j["group"] = to_string(*docs[i].group);
        if (docs[i].label) j["label"] = *docs[i].label;
        j["generated"] = outs[i];
        jsonl += j.dump() + "\n";
    }
    ctx.log << "generated " << docs.size() << " texts\n";
    return {{"generated.jsonl", jsonl}};
}

Outputs run_evaluate(const Context& ctx, const std::string& config_hash) {
    const auto& c = ctx.cfg;
    if (c.scoring_lm != "witten-bell-trigram") {
        throw BackendError("scoring LM '" + c.scoring_lm + "' is not available in this build");
    }
    const auto train_docs = read_raw_documents(c.corpus, c.corpus_format);
    std::vector<std::string> train_texts;
    for (const auto& d : train_docs) train_texts.push_back(d.text);
    const auto lm = WittenBellTrigram::from_texts(train_texts);

    std::vector<std::string> sources, generated, labelled_out;
    std::vector<Group> labelled_groups;
    std::istringstream in(io::read_file(require_artifact(ctx.opt, Stage::generate, "generated.jsonl")));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        sources.push_back(j.at("text"));
        generated.push_back(j.at("generated"));
        if (j.contains("group")) {
            labelled_groups.push_back(parse_group(j.at("group").get<std::string>()));
            labelled_out.push_back(generated.back());
        }
    }
    if (generated.empty()) throw PreconditionError("no generated texts to evaluate");
    ojson metrics;
    metrics["perplexity"] = perplexity(generated, lm).to_json();
    metrics["source_perplexity"] = perplexity(sources, lm).to_json();

    std::vector<std::string> clf_texts;
    std::vector<Group> clf_groups;
    for (const auto& d : train_docs) {
        if (!d.group) continue;
        clf_texts.push_back(d.text);
        clf_groups.push_back(*d.group);
    }
    std::string clf_name = "none";
    if (!labelled_out.empty() && !clf_texts.empty()) {
        std::shared_ptr<const EmbeddingBackend> backend = backend_of(c);
        const auto clf =
            PooledEmbeddingClassifier::train(clf_texts, clf_groups, backend, load_tokenizer(c), c.classifier);
        metrics["transfer_accuracy"] = transfer_accuracy(labelled_groups, labelled_out, clf);
        metrics["transfer_instances"] = labelled_out.size();
        clf_name = clf.name();
    } else {
        metrics["transfer_accuracy"] = nullptr;
    }
    ojson report;
    report["metrics"] = metrics;
    report["provenance"] = {{"scoring_lm", lm.name()},
                            {"perplexity_pooling", "token"},
                            {"attribute_classifier", clf_name},
                            {"embedding_backend", c.embedding_backend},
                            {"seed", c.seed},
                            {"config_hash", config_hash}};
    ctx.log << "perplexity " << metrics["perplexity"]["perplexity"].get<double>() << " (sources "
            << metrics["source_perplexity"]["perplexity"].get<double>() << ")\n";
    return {{"report.json", report.dump(2) + "\n"}};
}

}  // namespace

StageStatus run_stage(Stage s, const PipelineConfig& cfg, const RunOptions& opt, std::ostream& log) {
    const ojson sc = stage_config(s, cfg, opt);
    const std::string config_hash = io::sha256_hex(sc.dump());
    const StageInputs inputs = stage_inputs(s, cfg, opt);
    ojson input_hashes = ojson::object();
    for (const auto& [role, path] : inputs.files) input_hashes[role] = io::sha256_file(path);

    ojson manifest = read_manifest(opt);
    const std::string name = stage_name(s);
    if (manifest["stages"].contains(name)) {
        const auto& prev = manifest["stages"][name];
        if (prev.value("config_hash", "") != config_hash && !opt.force) {
            throw PreconditionError("stage " + name + " was run with a different configuration; rerun with --force");
        }
        bool current = prev.value("config_hash", "") == config_hash && prev.value("inputs", ojson()) == input_hashes;
        if (current) {
            for (const auto& [rel, hash] : prev.at("outputs").items()) {
                const fs::path p = opt.artifacts / rel;
                if (!fs::exists(p) || io::sha256_file(p) != hash.get<std::string>()) current = false;
            }
        }
        if (current) {
            log << name << ": up to date\n";
            return StageStatus::up_to_date;
        }
    }

    const Context ctx{cfg, opt, log};
    Outputs outputs;
    switch (s) {
        case Stage::discover: outputs = run_discover(ctx); break;
        case Stage::train_flow: outputs = run_train_flow(ctx); break;
        case Stage::build_dict: outputs = run_build_dict(ctx); break;
        case Stage::build_parallel: outputs = run_build_parallel(ctx); break;
        case Stage::train_generator: outputs = run_train_generator(ctx); break;
        case Stage::generate: outputs = run_generate(ctx); break;
        case Stage::evaluate: outputs = run_evaluate(ctx, config_hash); break;
    }
    fs::create_directories(opt.artifacts / name);
    ojson out_hashes = ojson::object();
    for (const auto& [file, bytes] : outputs) {
        io::write_file_atomic(opt.artifacts / name / file, bytes);
        out_hashes[name + "/" + file] = io::sha256_hex(bytes);
    }
    manifest["stages"][name] = {{"config_hash", config_hash}, {"config", sc}, {"inputs", input_hashes}, {"outputs", out_hashes}};
    io::write_file_atomic(manifest_path(opt), manifest.dump(2) + "\n");
    log << name << ": done\n";
    return StageStatus::ran;
}

// ---- lock ----

ArtifactLock::ArtifactLock(const fs::path& artifacts) : path_(artifacts / ".lock") {
    fs::create_directories(artifacts);
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
        if (errno == EEXIST) {
            throw PreconditionError("artifact directory " + artifacts.string() + " is locked by another run (" +
                                    path_.string() + ")");
        }
        throw Error("cannot create lock " + path_.string() + ": " + std::strerror(errno));
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
}

ArtifactLock::~ArtifactLock() {
    std::error_code ec;
    fs::remove(path_, ec);
}

// ---- bundled fixture ----

void write_fixture(const fs::path& dir, std::size_t corpus_docs, std::size_t eval_docs, std::uint64_t seed) {
    namespace fx = fixtures;
    fs::create_directories(dir);
    auto docs_of = [](const std::vector<fx::GrammarSentence>& s, const std::string& prefix) {
        std::vector<RawDocument> docs;
        for (std::size_t i = 0; i < s.size(); ++i) {
            docs.push_back({prefix + std::to_string(i), s[i].text, std::nullopt, s[i].group});
        }
        return docs;
    };
    io::write_file_atomic(dir / "corpus.jsonl", fx::to_jsonl(docs_of(fx::grammar_corpus(corpus_docs, seed), "c")));
    io::write_file_atomic(dir / "eval.jsonl", fx::to_jsonl(docs_of(fx::grammar_corpus(eval_docs, seed + 1), "e")));
    std::string vocab;
    for (const auto& p : fx::fixture_vocabulary()) vocab += p + "\n";
    io::write_file_atomic(dir / "vocab.txt", vocab);
    std::string lex = "# word\tgroup\tanchor\n";
    for (const auto& [w, e] : fx::grammar_lexicon().entries) lex += w + "\t" + to_string(e.group) + "\t" + e.anchor + "\n";
    io::write_file_atomic(dir / "lexicon.tsv", lex);
    for (Group g : {Group::a, Group::b}) {
        std::string names = "# name\tfrequency\n";
        for (const auto& n : fx::fixture_names(g)) names += n.name + "\t" + std::to_string(n.frequency) + "\n";
        io::write_file_atomic(dir / (g == Group::a ? "names_a.tsv" : "names_b.tsv"), names);
    }
    ojson cfg;
    cfg["corpus"] = "corpus.jsonl";
    cfg["corpus_format"] = "jsonl";
    cfg["eval_corpus"] = "eval.jsonl";
    cfg["vocab"] = "vocab.txt";
    cfg["lexicon"] = "lexicon.tsv";
    cfg["names_a"] = "names_a.tsv";
    cfg["names_b"] = "names_b.tsv";
    cfg["prompt"] = {"she", "he"};
    cfg["seed"] = 7;
    cfg["embedding"] = {{"backend", "toy"}, {"dim", 32}, {"seed", 7}, {"attribute_strength", 1.0}, {"context_weight", 0.35}};
    cfg["discovery"] = {{"phi", 0.99}, {"min_instance_count", 1}, {"instance_cap", 256}};
    cfg["classifier"] = {{"max_epochs", 300}, {"learning_rate", 5e-3}};
    cfg["flow"] = {{"depth", 6}, {"sigma", 0.9}, {"epochs", 200}, {"learning_rate", 1e-2}, {"batch_size", 64},
                   {"noise_std", 0.2}, {"k", nullptr}};
    cfg["dictionary"] = {{"min_votes", 0.5}};
    cfg["correction"] = {{"enabled", true},      {"theta", 0.1},          {"max_mask_fraction", 0.3},
                         {"passes", 1},          {"discriminator", "toy"}, {"infiller", "toy"},
                         {"include_noop", true}};
    cfg["generator"] = {{"width", 64}, {"heads", 4}, {"encoder_layers", 2}, {"decoder_layers", 2},
                        {"max_length", 128}, {"epochs", 12}, {"batch_size", 16}, {"learning_rate", 1e-3}};
    cfg["evaluate"] = {{"lm", "witten-bell-trigram"}};
    io::write_file_atomic(dir / "config.json", cfg.dump(2) + "\n");
}

}  // namespace fairflow
