#pragma once

// Bidirectional attribute word-pair dictionaries: assembly from voted
// candidates, first-name extension by frequency rank, merging and TSV I/O.

#include "fairflow/corpus.hpp"
#include "fairflow/flow.hpp"
#include "fairflow/subspace.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace fairflow {

enum class PairSource { prompt, discovered, name };

const char* to_string(PairSource s);
PairSource parse_pair_source(std::string_view s);

struct DictionaryEntry {
    std::string word_a;  // group-a side, case-folded
    std::string word_b;  // group-b side, case-folded
    PairSource source = PairSource::discovered;
    std::optional<std::size_t> votes;
    std::optional<std::size_t> total;

    friend bool operator==(const DictionaryEntry&, const DictionaryEntry&) = default;
};

// Canonical order: source (prompt < discovered < name), then word_a, word_b.
bool canonical_less(const DictionaryEntry& x, const DictionaryEntry& y);

// Every covered word maps to exactly one counterpart; no self pairs.
class WordPairDictionary {
public:
    enum class AddStatus { added, duplicate, conflict, self_pair };

    // Case-folds both words. Rejects the entry when either word already maps
    // to a different counterpart.
    AddStatus add(DictionaryEntry e);

    std::optional<std::string> counterpart(std::string_view word) const;
    bool contains(std::string_view word) const { return counterpart(word).has_value(); }

    // Entries in canonical order.
    std::vector<DictionaryEntry> entries() const;
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    // Re-derives the lookup table from the entries and checks it is a bijection.
    bool bijective() const;

    std::string to_tsv() const;
    static WordPairDictionary from_tsv(const std::string& text);
    void save(const std::filesystem::path& path) const;
    static WordPairDictionary load(const std::filesystem::path& path);

    friend bool operator==(const WordPairDictionary& x, const WordPairDictionary& y) {
        return x.entries() == y.entries();
    }

private:
    std::vector<DictionaryEntry> entries_;
    std::map<std::string, std::string, std::less<>> lookup_;
};

struct AssembleResult {
    WordPairDictionary dictionary;
    std::vector<std::string> conflicts;  // human-readable log lines
    std::vector<WordPairCandidate> dropped_below_threshold;
    // Discovered pairs with a word that also has high-confidence instances in
    // the other group (polysemy guard). Still emitted.
    std::vector<DictionaryEntry> flagged_polysemous;
};

// Keeps candidates with votes/total >= min_votes, orients each as (a-side,
// b-side), merges the two directions of the same unordered pair, and adds
// them by descending vote fraction, then votes, then lexicographic order.
// The prompt pair is added first and always wins.
AssembleResult assemble(const PromptPair& prompt, const std::vector<WordPairCandidate>& pairs,
                        double min_votes = 0.5, const std::set<std::string>* ambiguous_words = nullptr);

// Words present in both discovered sets.
std::set<std::string> ambiguous_words(const DiscoveryResult& discovered);

struct NameFrequency {
    std::string name;
    std::size_t frequency = 0;
};

struct NameFrequencyList {
    Group group = Group::a;
    std::vector<NameFrequency> names;

    // Validates uniqueness (case-folded).
    void add(std::string name, std::size_t frequency);
    // TSV: name<TAB>frequency; '#' comments allowed.
    static NameFrequencyList load(const std::filesystem::path& path, Group group);
    // Descending frequency, ties by name.
    std::vector<NameFrequency> ranked() const;
};

// Rank-i name of list a paired with rank-i name of list b.
std::vector<DictionaryEntry> names_intervention(const NameFrequencyList& list_a,
                                                const NameFrequencyList& list_b);

struct MergeResult {
    WordPairDictionary dictionary;
    std::vector<std::string> conflicts;  // one line per extra entry that was not added
};

// Union where base entries win. Every extra entry that is not added (conflict
// or exact duplicate) produces one log line, so
// |merged| = |base| + |extra| - |conflicts|.
MergeResult merge(const WordPairDictionary& base, const WordPairDictionary& extra);

}  // namespace fairflow
