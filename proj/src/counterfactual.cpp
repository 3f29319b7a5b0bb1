#include "fairflow/counterfactual.hpp"

#include "fairflow/errors.hpp"

#include <cmath>
#include <sstream>

namespace fairflow {

LabeledVectors attribute_instances(const VocabularyEmbeddings& vocab, const DiscoveryResult& discovered,
                                   const SubspaceClassifier& h, double phi) {
    LabeledVectors out;
    for (const auto* set : {&discovered.set_a, &discovered.set_b}) {
        const Group side = set == &discovered.set_a ? Group::a : Group::b;
        for (const auto& w : *set) {
            auto it = vocab.find(w);
            if (it == vocab.end()) continue;
            for (const auto& e : it->second) {
                const auto [pa, pb] = h.classify(e);
                if ((side == Group::a ? pa : pb) > phi) out.add(e.vector, side);
            }
        }
    }
    return out;
}

VocabularyTable build_vocabulary_table(const VocabularyEmbeddings& vocab) {
    VocabularyTable table;
    std::size_t d = 0;
    for (const auto& [word, embs] : vocab) {
        if (!embs.empty()) {
            d = embs.front().vector.size();
            break;
        }
    }
    std::vector<std::vector<double>> rows;
    for (const auto& [word, embs] : vocab) {
        if (embs.empty()) continue;
        std::vector<double> mean(d, 0.0);
        for (const auto& e : embs) {
            if (e.vector.size() != d) throw DimensionMismatch(d, e.vector.size());
            for (std::size_t j = 0; j < d; ++j) mean[j] += e.vector[j];
        }
        for (double& x : mean) x /= static_cast<double>(embs.size());
        table.words.push_back(word);
        rows.push_back(std::move(mean));
    }
    table.vectors = Matrix(rows.size(), d);
    table.norms.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy(rows[i].begin(), rows[i].end(), table.vectors.row(i).begin());
        table.norms[i] = kernels::norm(rows[i]);
    }
    return table;
}

namespace {

struct Job {
    std::string word;
    Group side;
    const std::vector<ContextualEmbedding>* instances;
};

std::vector<Job> make_jobs(const VocabularyEmbeddings& vocab, const DiscoveryResult& discovered) {
    std::vector<Job> jobs;
    for (const auto* set : {&discovered.set_a, &discovered.set_b}) {
        const Group side = set == &discovered.set_a ? Group::a : Group::b;
        for (const auto& w : *set) {
            auto it = vocab.find(w);
            if (it == vocab.end() || it->second.empty()) continue;
            jobs.push_back({w, side, &it->second});
        }
    }
    return jobs;
}

std::vector<WordPairCandidate> collect(const std::vector<Job>& jobs,
                                       const std::vector<std::vector<std::string>>& decoded) {
    std::vector<WordPairCandidate> out;
    for (std::size_t j = 0; j < jobs.size(); ++j) {
        auto [mode, votes] = majority_vote(decoded[j]);
        if (mode == jobs[j].word) continue;
        out.push_back({jobs[j].word, jobs[j].side, mode, votes, decoded[j].size()});
    }
    return out;
}

}  // namespace

std::vector<WordPairCandidate> generate_word_pairs(const VocabularyEmbeddings& vocab,
                                                   const DiscoveryResult& discovered,
                                                   const FlowModel& flow, const VocabularyTable& table,
                                                   kernels::Exec exec) {
    const auto jobs = make_jobs(vocab, discovered);
    // Flatten to per-instance work so the parallel loop balances across words.
    std::vector<std::pair<std::size_t, std::size_t>> work;
    std::vector<std::vector<std::string>> decoded(jobs.size());
    for (std::size_t j = 0; j < jobs.size(); ++j) {
        decoded[j].resize(jobs[j].instances->size());
        for (std::size_t i = 0; i < jobs[j].instances->size(); ++i) work.emplace_back(j, i);
    }
    kernels::parallel_for(
        work.size(),
        [&](std::size_t w) {
            const auto [j, i] = work[w];
            const auto z = counterfactual_embedding(flow, (*jobs[j].instances)[i].vector, other(jobs[j].side));
            decoded[j][i] = decode_word(table, z, kernels::Exec::serial);
        },
        exec);
    return collect(jobs, decoded);
}

std::vector<WordPairCandidate> generate_word_pairs_reference(const VocabularyEmbeddings& vocab,
                                                             const DiscoveryResult& discovered,
                                                             const FlowModel& flow,
                                                             const VocabularyTable& table) {
    const auto jobs = make_jobs(vocab, discovered);
    std::vector<std::vector<std::string>> decoded(jobs.size());
    const auto& proto_a = flow.prototype(Group::a);
    const auto& proto_b = flow.prototype(Group::b);
    if (!proto_a || !proto_b) throw NotFittedError("flow model has no group prototypes");
    for (std::size_t j = 0; j < jobs.size(); ++j) {
        const auto& proto = jobs[j].side == Group::a ? *proto_b : *proto_a;
        for (const auto& e : *jobs[j].instances) {
            auto zt = flow.forward(e.vector).z_tilde;
            for (std::size_t i = 0; i < proto.size(); ++i) zt[i] = proto[i];
            const auto z = flow.inverse(zt);
            // Plain cosine scan, first maximum wins.
            std::size_t best = 0;
            double best_sim = -INFINITY;
            const double zn = kernels::norm(z);
            for (std::size_t r = 0; r < table.words.size(); ++r) {
                double dot = 0.0;
                for (std::size_t c = 0; c < z.size(); ++c) dot += table.vectors(r, c) * z[c];
                const double denom = table.norms[r] * zn;
                const double sim = denom > 0.0 ? dot / denom : 0.0;
                if (sim > best_sim) {
                    best_sim = sim;
                    best = r;
                }
            }
            decoded[j].push_back(table.words[best]);
        }
    }
    return collect(jobs, decoded);
}

std::string pair_candidates_tsv(const std::vector<WordPairCandidate>& pairs) {
    std::ostringstream out;
    out << "word\tside\tcounterfactual\tvotes\ttotal\n";
    for (const auto& p : pairs) {
        out << p.word << '\t' << to_string(p.side) << '\t' << p.counterfactual << '\t' << p.votes << '\t'
            << p.total << '\n';
    }
    return out.str();
}

std::vector<WordPairCandidate> parse_pair_candidates_tsv(const std::string& text) {
    std::vector<WordPairCandidate> out;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line_no == 1) continue;
        std::istringstream fields(line);
        WordPairCandidate p;
        std::string side, votes, total;
        if (!std::getline(fields, p.word, '\t') || !std::getline(fields, side, '\t') ||
            !std::getline(fields, p.counterfactual, '\t') || !std::getline(fields, votes, '\t') ||
            !std::getline(fields, total, '\t')) {
            throw ParseError("pair candidate row needs 5 columns", line_no);
        }
        try {
            p.side = parse_group(side);
            p.votes = std::stoull(votes);
            p.total = std::stoull(total);
        } catch (const std::exception&) {
            throw ParseError("bad pair candidate row", line_no);
        }
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace fairflow
