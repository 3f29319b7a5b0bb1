#include "fairflow/fixtures.hpp"

#include "fairflow/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

namespace fairflow::fixtures {

namespace {

std::vector<double> unit_vector(std::size_t d, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> u(d);
    double s = 0.0;
    for (double& x : u) {
        x = n(rng);
        s += x * x;
    }
    for (double& x : u) x /= std::sqrt(s);
    return u;
}

template <class T>
const T& pick(const std::vector<T>& v, std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> d(0, v.size() - 1);
    return v[d(rng)];
}

std::string capitalise(std::string w) {
    if (!w.empty() && w[0] >= 'a' && w[0] <= 'z') w[0] = static_cast<char>(w[0] - 'a' + 'A');
    return w;
}

bool is_gendered(Slot s) {
    return s == Slot::pron || s == Slot::poss || s == Slot::refl || s == Slot::noun || s == Slot::name;
}

}  // namespace

DirectionFixture attribute_direction(std::size_t d, std::size_t n_train, std::size_t n_test,
                                     std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    DirectionFixture f;
    f.direction = unit_vector(d, rng);
    std::normal_distribution<double> n(0.0, 1.0);
    auto fill = [&](LabeledVectors& lv, std::size_t count) {
        for (std::size_t i = 0; i < count; ++i) {
            std::vector<double> z(d);
            double proj = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                z[j] = n(rng);
                proj += z[j] * f.direction[j];
            }
            lv.add(std::move(z), proj > 0.0 ? Group::a : Group::b);
        }
    };
    fill(f.train, n_train);
    fill(f.test, n_test);
    return f;
}

LabeledVectors attribute_subspace(std::size_t d, std::size_t attribute_dims, std::size_t n, double shift,
                                  std::uint64_t seed) {
    if (attribute_dims == 0 || attribute_dims >= d) throw PreconditionError("need 0 < attribute_dims < d");
    std::mt19937_64 rng(seed);
    // Gram-Schmidt on random directions.
    std::vector<std::vector<double>> basis;
    while (basis.size() < attribute_dims) {
        auto v = unit_vector(d, rng);
        for (const auto& b : basis) {
            double p = 0.0;
            for (std::size_t j = 0; j < d; ++j) p += v[j] * b[j];
            for (std::size_t j = 0; j < d; ++j) v[j] -= p * b[j];
        }
        double s = 0.0;
        for (double x : v) s += x * x;
        for (double& x : v) x /= std::sqrt(s);
        basis.push_back(std::move(v));
    }
    std::normal_distribution<double> normal(0.0, 1.0);
    LabeledVectors out;
    for (std::size_t i = 0; i < n; ++i) {
        const Group g = i % 2 == 0 ? Group::a : Group::b;
        const double sign = g == Group::a ? 1.0 : -1.0;
        std::vector<double> z(d);
        for (double& x : z) x = normal(rng);
        for (const auto& b : basis) {
            for (std::size_t j = 0; j < d; ++j) z[j] += sign * shift * b[j];
        }
        out.add(std::move(z), g);
    }
    return out;
}

const std::vector<PlantedPair>& planted_pairs() {
    static const std::vector<PlantedPair> pairs = {{"she", "he"}, {"her", "his"}, {"woman", "man"}};
    return pairs;
}

const std::vector<std::string>& distractor_words() {
    static const std::vector<std::string> words = {
        "table",  "river",  "stone",   "cloud",  "apple",  "window", "garden", "music",  "paper",
        "forest", "bridge", "candle",  "orange", "silver", "market", "winter", "coffee", "pencil",
        "island", "mirror", "rocket",  "planet", "engine", "harbor", "ladder", "meadow", "violin",
        "tunnel", "basket", "desert",  "lantern", "castle", "pepper", "camera", "thunder", "valley",
        "marble", "folder", "compass", "saddle", "button", "canyon", "feather", "glacier", "kettle",
        "lemon",  "magnet", "noodle",  "puzzle", "quartz"};
    return words;
}

AttributeLexicon planted_lexicon() {
    AttributeLexicon lex;
    for (const auto& p : planted_pairs()) {
        lex.add(p.word_a, Group::a, p.word_a + "/" + p.word_b);
        lex.add(p.word_b, Group::b, p.word_a + "/" + p.word_b);
    }
    return lex;
}

std::vector<RawDocument> planted_vocabulary_corpus(std::size_t n_docs, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<std::string> attribute;
    for (const auto& p : planted_pairs()) {
        attribute.push_back(p.word_a);
        attribute.push_back(p.word_b);
    }
    std::uniform_int_distribution<std::size_t> len(6, 12);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<RawDocument> docs;
    for (std::size_t i = 0; i < n_docs; ++i) {
        std::vector<std::string> words;
        const std::size_t n = len(rng);
        for (std::size_t j = 0; j < n; ++j) words.push_back(pick(distractor_words(), rng));
        const std::size_t inserts = (u(rng) < 0.9 ? 1 : 0) + (u(rng) < 0.3 ? 1 : 0);
        for (std::size_t j = 0; j < inserts; ++j) {
            std::uniform_int_distribution<std::size_t> pos(0, words.size());
            words.insert(words.begin() + static_cast<std::ptrdiff_t>(pos(rng)), pick(attribute, rng));
        }
        std::string text;
        for (const auto& w : words) text += (text.empty() ? "" : " ") + w;
        docs.push_back({"planted-" + std::to_string(i), text + " .", std::nullopt, std::nullopt});
    }
    return docs;
}

const std::vector<Template>& grammar_templates() {
    using S = Slot;
    static const std::vector<Template> templates = {
        {{{S::pron, ""}, {S::literal, "taught"}, {S::refl, ""}, {S::topic, ""}}, true},
        {{{S::name, ""}, {S::literal, "discovered"}, {S::poss, ""}, {S::literal, "passion"},
          {S::literal, "for"}, {S::topic, ""}, {S::literal, "after"}, {S::literal, "teaching"},
          {S::refl, ""}, {S::topic, ""}},
         true},
        {{{S::literal, "the"}, {S::noun, ""}, {S::literal, "said"}, {S::literal, "that"}, {S::pron, ""},
          {S::literal, "would"}, {S::literal, "finish"}, {S::poss, ""}, {S::thing, ""}, {S::day, ""}},
         true},
        {{{S::pron, ""}, {S::literal, "is"}, {S::literal, "a"}, {S::job, ""}, {S::literal, "and"},
          {S::pron, ""}, {S::literal, "loves"}, {S::poss, ""}, {S::thing, ""}},
         true},
        {{{S::name, ""}, {S::literal, "is"}, {S::literal, "a"}, {S::job, ""}, {S::literal, "who"},
          {S::literal, "taught"}, {S::refl, ""}, {S::topic, ""}},
         true},
        {{{S::literal, "the"}, {S::noun, ""}, {S::literal, "fixed"}, {S::poss, ""}, {S::thing, ""},
          {S::literal, "by"}, {S::refl, ""}},
         true},
        {{{S::literal, "the"}, {S::job, ""}, {S::literal, "repaired"}, {S::literal, "the"}, {S::thing, ""},
          {S::day, ""}},
         false},
        {{{S::literal, "the"}, {S::job, ""}, {S::literal, "studied"}, {S::topic, ""}, {S::day, ""}}, false},
    };
    return templates;
}

const std::vector<NameEntry>& fixture_names(Group g) {
    static const std::vector<NameEntry> a = {{"mary", 120}, {"anna", 95}, {"laura", 80},
                                             {"emma", 60},  {"sophia", 45}, {"olivia", 30}};
    static const std::vector<NameEntry> b = {{"john", 130}, {"peter", 90}, {"anthony", 85},
                                             {"james", 70}, {"david", 50}, {"michael", 20}};
    return g == Group::a ? a : b;
}

const std::vector<std::string>& slot_words(Slot s, Group g) {
    static const std::map<std::pair<Slot, Group>, std::vector<std::string>> words = [] {
        std::map<std::pair<Slot, Group>, std::vector<std::string>> m;
        m[{Slot::pron, Group::a}] = {"she"};
        m[{Slot::pron, Group::b}] = {"he"};
        m[{Slot::poss, Group::a}] = {"her"};
        m[{Slot::poss, Group::b}] = {"his"};
        m[{Slot::refl, Group::a}] = {"herself"};
        m[{Slot::refl, Group::b}] = {"himself"};
        m[{Slot::noun, Group::a}] = {"woman", "mother"};
        m[{Slot::noun, Group::b}] = {"man", "father"};
        for (Group g : {Group::a, Group::b}) {
            for (const auto& n : fixture_names(g)) m[{Slot::name, g}].push_back(n.name);
        }
        return m;
    }();
    auto it = words.find({s, g});
    if (it == words.end()) throw PreconditionError("slot has no gendered word list");
    return it->second;
}

const std::vector<std::string>& slot_words(Slot s) {
    static const std::vector<std::string> topic = {"python", "chess",  "guitar",  "painting", "cooking",
                                                   "statistics", "history", "physics", "poetry", "photography"};
    static const std::vector<std::string> thing = {"report", "bike", "garden", "essay",
                                                   "project", "book", "car", "house"};
    static const std::vector<std::string> job = {"nurse", "doctor", "pilot", "lawyer",
                                                 "chef", "writer", "teacher", "baker"};
    static const std::vector<std::string> day = {"today", "tomorrow", "tonight"};
    switch (s) {
        case Slot::topic: return topic;
        case Slot::thing: return thing;
        case Slot::job: return job;
        case Slot::day: return day;
        default: throw PreconditionError("slot is gendered or literal");
    }
}

AttributeLexicon grammar_lexicon() {
    AttributeLexicon lex = planted_lexicon();
    return lex;
}

GrammarSentence sample_sentence(std::mt19937_64& rng, std::optional<std::size_t> template_index,
                                std::optional<Group> group) {
    const auto& templates = grammar_templates();
    std::uniform_int_distribution<std::size_t> pick_t(0, templates.size() - 1);
    GrammarSentence out;
    out.template_index = template_index.value_or(pick_t(rng));
    const Template& t = templates.at(out.template_index);
    std::bernoulli_distribution coin(0.5);
    const Group g = group.value_or(coin(rng) ? Group::a : Group::b);
    if (t.gendered) out.group = g;
    std::string text;
    for (std::size_t i = 0; i < t.parts.size(); ++i) {
        const auto& [slot, lit] = t.parts[i];
        std::string w;
        if (slot == Slot::literal) {
            w = lit;
        } else if (is_gendered(slot)) {
            w = pick(slot_words(slot, g), rng);
        } else {
            w = pick(slot_words(slot), rng);
        }
        if (i == 0 || slot == Slot::name) w = capitalise(w);
        text += (text.empty() ? "" : " ") + w;
    }
    out.text = text + " .";
    return out;
}

std::vector<GrammarSentence> grammar_corpus(std::size_t n, std::uint64_t seed, double neutral_fraction) {
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> gendered, neutral;
    for (std::size_t i = 0; i < grammar_templates().size(); ++i) {
        (grammar_templates()[i].gendered ? gendered : neutral).push_back(i);
    }
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<GrammarSentence> out;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& pool = u(rng) < neutral_fraction ? neutral : gendered;
        out.push_back(sample_sentence(rng, pick(pool, rng)));
    }
    return out;
}

bool in_grammar(const std::vector<std::string>& words) {
    for (const Template& t : grammar_templates()) {
        if (words.size() != t.parts.size() + 1 || words.back() != ".") continue;
        std::optional<Group> g;
        bool ok = true;
        for (std::size_t i = 0; i < t.parts.size() && ok; ++i) {
            const auto& [slot, lit] = t.parts[i];
            const std::string& w = words[i];
            if (slot == Slot::literal) {
                ok = w == lit;
            } else if (is_gendered(slot)) {
                std::optional<Group> found;
                for (Group cand : {Group::a, Group::b}) {
                    if (std::ranges::count(slot_words(slot, cand), w)) found = cand;
                }
                if (!found || (g && *g != *found)) ok = false;
                g = found;
            } else {
                ok = std::ranges::count(slot_words(slot), w) > 0;
            }
        }
        if (ok) return true;
    }
    return false;
}

bool in_grammar(const std::string& text) {
    std::vector<std::string> words;
    std::istringstream in(case_fold(text));
    std::string w;
    while (in >> w) words.push_back(w);
    return in_grammar(words);
}

std::optional<Corruption> corrupt_agreement(const GrammarSentence& s, std::mt19937_64& rng) {
    const Template& t = grammar_templates().at(s.template_index);
    if (!s.group) return std::nullopt;
    std::vector<std::size_t> gendered_positions, candidates;
    for (std::size_t i = 0; i < t.parts.size(); ++i) {
        if (!is_gendered(t.parts[i].first)) continue;
        gendered_positions.push_back(i);
        if (t.parts[i].first != Slot::name) candidates.push_back(i);
    }
    if (gendered_positions.size() < 3 || candidates.empty()) return std::nullopt;
    std::vector<std::string> words;
    std::istringstream in(s.text);
    std::string w;
    while (in >> w) words.push_back(w);
    const std::size_t pos = pick(candidates, rng);
    const Slot slot = t.parts[pos].first;
    const auto& own = slot_words(slot, *s.group);
    const auto& other_words = slot_words(slot, other(*s.group));
    const std::string folded = case_fold(words[pos]);
    const auto idx = static_cast<std::size_t>(std::ranges::find(own, folded) - own.begin());
    Corruption c;
    c.word_index = pos;
    c.original = words[pos];
    std::string repl = other_words[std::min(idx, other_words.size() - 1)];
    if (pos == 0) repl = capitalise(repl);
    c.replacement = repl;
    words[pos] = repl;
    for (const auto& x : words) c.text += (c.text.empty() ? "" : " ") + x;
    return c;
}

std::vector<std::string> fixture_vocabulary() {
    std::set<std::string> v = {".", ",", "the", "men", "are", "duchess", "##es", "##s", "##ing", "##ed"};
    for (const auto& t : grammar_templates()) {
        for (const auto& [slot, lit] : t.parts) {
            if (slot == Slot::literal) v.insert(lit);
        }
    }
    for (Slot s : {Slot::pron, Slot::poss, Slot::refl, Slot::noun, Slot::name}) {
        for (Group g : {Group::a, Group::b}) v.insert(slot_words(s, g).begin(), slot_words(s, g).end());
    }
    for (Slot s : {Slot::topic, Slot::thing, Slot::job, Slot::day}) {
        v.insert(slot_words(s).begin(), slot_words(s).end());
    }
    v.insert(distractor_words().begin(), distractor_words().end());
    for (const auto& p : planted_pairs()) {
        v.insert(p.word_a);
        v.insert(p.word_b);
    }
    return {v.begin(), v.end()};
}

std::string to_jsonl(const std::vector<RawDocument>& docs) {
    std::string out;
    for (const auto& d : docs) {
        nlohmann::ordered_json j;
        j["id"] = d.id;
        j["text"] = d.text;
        if (d.label) j["label"] = *d.label;
        if (d.group) j["group"] = to_string(*d.group);
        out += j.dump() + "\n";
    }
    return out;
}

std::vector<SentencePair> template_pairs(std::size_t n, std::uint64_t seed) {
    static const std::vector<std::string> verbs = {"painted", "sold", "cleaned", "found", "lost", "bought", "moved", "fixed"};
    static const std::vector<std::string> things = {"car", "house", "bike", "desk", "boat", "lamp", "phone", "coat"};
    static const std::vector<std::string> days = {"today", "tomorrow", "tonight"};
    static const std::vector<std::string> jobs = {"nurse", "doctor", "pilot", "lawyer", "chef", "writer", "teacher", "baker"};
    static const std::vector<std::array<std::string, 2>> nouns = {{"woman", "man"}, {"mother", "father"}};
    const std::size_t capacity = 2 * verbs.size() * things.size() * days.size() +
                                 2 * nouns.size() * verbs.size() * things.size() + 2 * jobs.size();
    if (n > capacity) throw PreconditionError("template_pairs supports at most " + std::to_string(capacity) + " pairs");
    std::mt19937_64 rng(seed);
    auto pick = [&](const auto& v) -> const auto& { return v[rng() % v.size()]; };
    std::set<std::string> seen;
    std::vector<SentencePair> out;
    while (out.size() < n) {
        const int g = static_cast<int>(rng() % 2);
        const std::array<std::string, 2> pron = {"She", "He"};
        const std::array<std::string, 2> poss = {"her", "his"};
        SentencePair p;
        switch (rng() % 3) {
            case 0: {
                const auto& v = pick(verbs);
                const auto& t = pick(things);
                const auto& d = pick(days);
                p.source = pron[g] + " " + v + " " + poss[g] + " " + t + " " + d + " .";
                p.target = pron[1 - g] + " " + v + " " + poss[1 - g] + " " + t + " " + d + " .";
                break;
            }
            case 1: {
                const auto& nn = pick(nouns);
                const auto& v = pick(verbs);
                const auto& t = pick(things);
                p.source = "The " + nn[g] + " " + v + " " + poss[g] + " " + t + " .";
                p.target = "The " + nn[1 - g] + " " + v + " " + poss[1 - g] + " " + t + " .";
                break;
            }
            default: {
                const auto& j = pick(jobs);
                p.source = pron[g] + " is a " + j + " .";
                p.target = pron[1 - g] + " is a " + j + " .";
                break;
            }
        }
        if (seen.insert(p.source).second) out.push_back(std::move(p));
    }
    return out;
}

}  // namespace fairflow::fixtures
