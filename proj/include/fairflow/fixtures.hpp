#pragma once

// Synthetic data used by the tests, the acceptance gate and the bundled
// example pipeline: Gaussian attribute datasets for the flow, a corpus with a
// planted attribute vocabulary, and a small gender-agreement grammar with a
// membership oracle.

#include "fairflow/corpus.hpp"
#include "fairflow/embedding.hpp"
#include "fairflow/flow.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace fairflow::fixtures {

// z ~ N(0, I_d), group a iff u.z > 0 for a fixed random unit vector u.
struct DirectionFixture {
    LabeledVectors train;
    LabeledVectors test;
    std::vector<double> direction;
};
DirectionFixture attribute_direction(std::size_t d, std::size_t n_train, std::size_t n_test,
                                     std::uint64_t seed);

// z ~ N(0, I_d) shifted by +-shift along each of `attribute_dims` random
// orthonormal directions, with the sign set by the group.
LabeledVectors attribute_subspace(std::size_t d, std::size_t attribute_dims, std::size_t n, double shift,
                                  std::uint64_t seed);

// ---- planted vocabulary ---------------------------------------------------

struct PlantedPair {
    std::string word_a;
    std::string word_b;
};

const std::vector<PlantedPair>& planted_pairs();          // she/he, her/his, woman/man
const std::vector<std::string>& distractor_words();      // 50 neutral words
AttributeLexicon planted_lexicon();

// Documents of 6-12 distractor words; most carry one or two planted attribute
// words at random positions.
std::vector<RawDocument> planted_vocabulary_corpus(std::size_t n_docs, std::uint64_t seed);

// ---- agreement grammar ----------------------------------------------------
//
// Every sentence instantiates one template; the gendered slots of a sentence
// (subject pronoun, possessive, reflexive, noun, first name) all agree.

enum class Slot { pron, poss, refl, noun, name, topic, thing, job, day, literal };

struct Template {
    std::vector<std::pair<Slot, std::string>> parts;  // literal text for Slot::literal
    bool gendered = true;
};

const std::vector<Template>& grammar_templates();
const std::vector<std::string>& slot_words(Slot s, Group g);  // gendered slots
const std::vector<std::string>& slot_words(Slot s);           // neutral slots

struct NameEntry {
    std::string name;
    std::size_t frequency = 0;
};
const std::vector<NameEntry>& fixture_names(Group g);

// Grammar words that are planted in the toy embedding lexicon. The reflexives
// are left out on purpose: substitution then misses them.
AttributeLexicon grammar_lexicon();

struct GrammarSentence {
    std::string text;               // capitalised, space-separated, ending in " ."
    std::size_t template_index = 0;
    std::optional<Group> group;     // nullopt for neutral templates
};

GrammarSentence sample_sentence(std::mt19937_64& rng, std::optional<std::size_t> template_index = {},
                                std::optional<Group> group = {});
std::vector<GrammarSentence> grammar_corpus(std::size_t n, std::uint64_t seed, double neutral_fraction = 0.15);

// Membership oracle over case-folded word tokens.
bool in_grammar(const std::vector<std::string>& words);
bool in_grammar(const std::string& text);

// Replaces one gendered non-name slot with its other-gender counterpart in a
// sentence from a template with at least three gendered slots. Returns the
// corrupted text and the corrupted word position, or nullopt when the sentence
// has no such slot.
struct Corruption {
    std::string text;
    std::size_t word_index = 0;
    std::string original;
    std::string replacement;
};
std::optional<Corruption> corrupt_agreement(const GrammarSentence& s, std::mt19937_64& rng);

// Word-piece vocabulary covering the grammar, the planted corpus and a few
// words that deliberately split into several pieces.
std::vector<std::string> fixture_vocabulary();

std::string to_jsonl(const std::vector<RawDocument>& docs);

// ---- generator pairs --------------------------------------------------------

struct SentencePair {
    std::string source;
    std::string target;
};

// Distinct short template sentences paired with their gender-swapped
// counterparts, over a vocabulary of about fifty words.
std::vector<SentencePair> template_pairs(std::size_t n, std::uint64_t seed);

}  // namespace fairflow::fixtures
