#include "fairflow/dictionary.hpp"

#include "fairflow/errors.hpp"
#include "fairflow/io.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace fairflow {

const char* to_string(PairSource s) {
    switch (s) {
        case PairSource::prompt: return "prompt";
        case PairSource::discovered: return "discovered";
        case PairSource::name: return "name";
    }
    return "?";
}

PairSource parse_pair_source(std::string_view s) {
    if (s == "prompt") return PairSource::prompt;
    if (s == "discovered") return PairSource::discovered;
    if (s == "name") return PairSource::name;
    throw PreconditionError("unknown pair source '" + std::string(s) + "'");
}

bool canonical_less(const DictionaryEntry& x, const DictionaryEntry& y) {
    return std::tie(x.source, x.word_a, x.word_b) < std::tie(y.source, y.word_a, y.word_b);
}

WordPairDictionary::AddStatus WordPairDictionary::add(DictionaryEntry e) {
    e.word_a = case_fold(e.word_a);
    e.word_b = case_fold(e.word_b);
    if (e.word_a.empty() || e.word_b.empty()) throw PreconditionError("dictionary words must be non-empty");
    if (e.word_a == e.word_b) return AddStatus::self_pair;
    const auto ca = counterpart(e.word_a);
    const auto cb = counterpart(e.word_b);
    if (ca && *ca == e.word_b) return AddStatus::duplicate;
    if (ca || cb) return AddStatus::conflict;
    lookup_[e.word_a] = e.word_b;
    lookup_[e.word_b] = e.word_a;
    const auto pos = std::ranges::upper_bound(entries_, e, canonical_less);
    entries_.insert(pos, std::move(e));
    return AddStatus::added;
}

std::optional<std::string> WordPairDictionary::counterpart(std::string_view word) const {
    auto it = lookup_.find(word);
    if (it == lookup_.end()) return std::nullopt;
    return it->second;
}

std::vector<DictionaryEntry> WordPairDictionary::entries() const { return entries_; }

bool WordPairDictionary::bijective() const {
    std::map<std::string, std::string> seen;
    for (const auto& e : entries_) {
        if (e.word_a == e.word_b) return false;
        for (const auto& [k, v] : {std::pair{e.word_a, e.word_b}, std::pair{e.word_b, e.word_a}}) {
            auto [it, inserted] = seen.emplace(k, v);
            if (!inserted && it->second != v) return false;
            if (!inserted) return false;  // same unordered pair listed twice
        }
    }
    return seen.size() == lookup_.size();
}

std::string WordPairDictionary::to_tsv() const {
    std::ostringstream out;
    auto num = [](const std::optional<std::size_t>& v) { return v ? std::to_string(*v) : std::string("-"); };
    for (const auto& e : entries_) {
        out << e.word_a << '\t' << e.word_b << '\t' << to_string(e.source) << '\t' << num(e.votes) << '\t'
            << num(e.total) << '\n';
    }
    return out.str();
}

WordPairDictionary WordPairDictionary::from_tsv(const std::string& text) {
    WordPairDictionary d;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    auto parse_num = [&](const std::string& s) -> std::optional<std::size_t> {
        if (s == "-") return std::nullopt;
        if (s.empty() || !std::ranges::all_of(s, [](char c) { return c >= '0' && c <= '9'; })) {
            throw ParseError("expected a count or '-', got '" + s + "'", line_no);
        }
        return std::stoull(s);
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, '\t')) cols.push_back(col);
        if (cols.size() != 5) {
            throw ParseError("dictionary line needs 5 tab-separated columns, got " + std::to_string(cols.size()),
                             line_no);
        }
        DictionaryEntry e;
        e.word_a = cols[0];
        e.word_b = cols[1];
        try {
            e.source = parse_pair_source(cols[2]);
        } catch (const PreconditionError& err) {
            throw ParseError(err.what(), line_no);
        }
        e.votes = parse_num(cols[3]);
        e.total = parse_num(cols[4]);
        if (e.word_a.empty() || e.word_b.empty()) throw ParseError("empty word", line_no);
        const auto status = d.add(std::move(e));
        if (status != AddStatus::added) throw ParseError("entry breaks the bijection", line_no);
    }
    return d;
}

void WordPairDictionary::save(const std::filesystem::path& path) const { io::write_file_atomic(path, to_tsv()); }

WordPairDictionary WordPairDictionary::load(const std::filesystem::path& path) {
    return from_tsv(io::read_file(path));
}

std::set<std::string> ambiguous_words(const DiscoveryResult& discovered) {
    std::set<std::string> out;
    std::ranges::set_intersection(discovered.set_a, discovered.set_b, std::inserter(out, out.end()));
    return out;
}

AssembleResult assemble(const PromptPair& prompt, const std::vector<WordPairCandidate>& pairs, double min_votes,
                        const std::set<std::string>* ambiguous) {
    AssembleResult res;
    res.dictionary.add({prompt.word_a, prompt.word_b, PairSource::prompt, std::nullopt, std::nullopt});

    struct Oriented {
        DictionaryEntry entry;
        double fraction = 0.0;
    };
    // Symmetric closure: (x -> y) and (y -> x) describe the same unordered pair;
    // keep the better-supported direction's statistics.
    std::map<std::pair<std::string, std::string>, Oriented> merged;
    for (const auto& p : pairs) {
        if (p.total == 0) continue;
        const double fraction = static_cast<double>(p.votes) / static_cast<double>(p.total);
        if (fraction < min_votes) {
            res.dropped_below_threshold.push_back(p);
            continue;
        }
        DictionaryEntry e;
        e.word_a = case_fold(p.side == Group::a ? p.word : p.counterfactual);
        e.word_b = case_fold(p.side == Group::a ? p.counterfactual : p.word);
        e.votes = p.votes;
        e.total = p.total;
        auto key = std::pair{e.word_a, e.word_b};
        auto it = merged.find(key);
        if (it == merged.end() || fraction > it->second.fraction ||
            (fraction == it->second.fraction && p.votes > *it->second.entry.votes)) {
            merged[key] = {std::move(e), fraction};
        }
    }
    std::vector<Oriented> ordered;
    for (auto& [k, v] : merged) ordered.push_back(std::move(v));
    std::ranges::stable_sort(ordered, [](const Oriented& x, const Oriented& y) {
        if (x.fraction != y.fraction) return x.fraction > y.fraction;
        if (*x.entry.votes != *y.entry.votes) return *x.entry.votes > *y.entry.votes;
        return std::tie(x.entry.word_a, x.entry.word_b) < std::tie(y.entry.word_a, y.entry.word_b);
    });
    for (auto& o : ordered) {
        const std::string desc = o.entry.word_a + "/" + o.entry.word_b + " (" + std::to_string(*o.entry.votes) + "/" +
                                 std::to_string(*o.entry.total) + ")";
        const DictionaryEntry copy = o.entry;
        switch (res.dictionary.add(o.entry)) {
            case WordPairDictionary::AddStatus::added:
                if (ambiguous && (ambiguous->contains(copy.word_a) || ambiguous->contains(copy.word_b))) {
                    res.flagged_polysemous.push_back(copy);
                }
                break;
            case WordPairDictionary::AddStatus::duplicate:
                res.conflicts.push_back("duplicate of an existing pair: " + desc);
                break;
            case WordPairDictionary::AddStatus::conflict: {
                std::string existing;
                if (auto c = res.dictionary.counterpart(copy.word_a)) existing += copy.word_a + "->" + *c + " ";
                if (auto c = res.dictionary.counterpart(copy.word_b)) existing += copy.word_b + "->" + *c;
                res.conflicts.push_back("conflict, kept " + existing + "; dropped " + desc);
                break;
            }
            case WordPairDictionary::AddStatus::self_pair:
                res.conflicts.push_back("self pair dropped: " + desc);
                break;
        }
    }
    return res;
}

void NameFrequencyList::add(std::string name, std::size_t frequency) {
    name = case_fold(name);
    if (name.empty()) throw PreconditionError("empty name");
    for (const auto& n : names) {
        if (n.name == name) throw PreconditionError("duplicate name '" + name + "'");
    }
    names.push_back({std::move(name), frequency});
}

NameFrequencyList NameFrequencyList::load(const std::filesystem::path& path, Group group) {
    std::ifstream in(path);
    if (!in) throw PreconditionError("cannot open name list " + path.string());
    NameFrequencyList list;
    list.group = group;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw ParseError("expected name<TAB>frequency", line_no);
        const std::string freq = line.substr(tab + 1);
        if (freq.empty() || !std::ranges::all_of(freq, [](char c) { return c >= '0' && c <= '9'; })) {
            throw ParseError("frequency must be a non-negative integer", line_no);
        }
        try {
            list.add(line.substr(0, tab), std::stoull(freq));
        } catch (const PreconditionError& e) {
            throw ParseError(e.what(), line_no);
        }
    }
    return list;
}

std::vector<NameFrequency> NameFrequencyList::ranked() const {
    std::vector<NameFrequency> r = names;
    std::ranges::sort(r, [](const NameFrequency& x, const NameFrequency& y) {
        if (x.frequency != y.frequency) return x.frequency > y.frequency;
        return x.name < y.name;
    });
    return r;
}

std::vector<DictionaryEntry> names_intervention(const NameFrequencyList& list_a, const NameFrequencyList& list_b) {
    const auto ra = list_a.ranked();
    const auto rb = list_b.ranked();
    std::vector<DictionaryEntry> out;
    for (std::size_t i = 0; i < std::min(ra.size(), rb.size()); ++i) {
        out.push_back({ra[i].name, rb[i].name, PairSource::name, std::nullopt, std::nullopt});
    }
    return out;
}

MergeResult merge(const WordPairDictionary& base, const WordPairDictionary& extra) {
    MergeResult res{base, {}};
    for (const auto& e : extra.entries()) {
        const std::string desc = e.word_a + "/" + e.word_b + " [" + to_string(e.source) + "]";
        switch (res.dictionary.add(e)) {
            case WordPairDictionary::AddStatus::added: break;
            case WordPairDictionary::AddStatus::duplicate:
                res.conflicts.push_back("already present: " + desc);
                break;
            default:
                res.conflicts.push_back("conflicts with base, kept base: " + desc);
                break;
        }
    }
    return res;
}

}  // namespace fairflow
