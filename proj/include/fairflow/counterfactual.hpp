#pragma once

// Counterfactual word-pair generation: every instance of a discovered word is
// pushed through the flow, K-swapped toward the other group, decoded against
// the vocabulary table and the decoded words are put to a majority vote.

#include "fairflow/flow.hpp"
#include "fairflow/subspace.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace fairflow {

// Flow training data: the instances of discovered words that meet the
// discovery criterion for their own side (P(side | z) > phi), labelled by side.
LabeledVectors attribute_instances(const VocabularyEmbeddings& vocab, const DiscoveryResult& discovered,
                                   const SubspaceClassifier& h, double phi);

// Mean contextual embedding per word, words in lexicographic order.
VocabularyTable build_vocabulary_table(const VocabularyEmbeddings& vocab);

// One candidate per discovered word whose modal counterfactual differs from
// the word itself. A word present in both sets is swapped toward b when it
// sits in set a, and toward a from set b; each side yields its own candidate.
std::vector<WordPairCandidate> generate_word_pairs(const VocabularyEmbeddings& vocab,
                                                   const DiscoveryResult& discovered,
                                                   const FlowModel& flow, const VocabularyTable& table,
                                                   kernels::Exec exec = kernels::Exec::parallel);

// Brute-force reference: decodes instance by instance with the serial kernels.
std::vector<WordPairCandidate> generate_word_pairs_reference(const VocabularyEmbeddings& vocab,
                                                             const DiscoveryResult& discovered,
                                                             const FlowModel& flow,
                                                             const VocabularyTable& table);

// TSV rows: word, side, counterfactual, votes, total.
std::string pair_candidates_tsv(const std::vector<WordPairCandidate>& pairs);
std::vector<WordPairCandidate> parse_pair_candidates_tsv(const std::string& text);

}  // namespace fairflow
