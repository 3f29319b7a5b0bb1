#pragma once

// Stage runner behind the command-line tool. Each stage reads upstream
// artifacts from the artifact directory, writes its own subdirectory
// atomically and records config and input/output hashes in manifest.json.

#include "fairflow/corpus.hpp"
#include "fairflow/embedding.hpp"
#include "fairflow/flow.hpp"
#include "fairflow/generator.hpp"
#include "fairflow/rewrite.hpp"
#include "fairflow/subspace.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace fairflow {

enum class Stage { discover, train_flow, build_dict, build_parallel, train_generator, generate, evaluate };

const std::vector<Stage>& all_stages();
const char* stage_name(Stage s);
std::optional<Stage> parse_stage(std::string_view s);

struct PipelineConfig {
    std::filesystem::path corpus;
    CorpusFormat corpus_format = CorpusFormat::jsonl;
    std::filesystem::path eval_corpus;
    std::filesystem::path vocab;    // empty: whitespace/punctuation tokens only
    std::filesystem::path lexicon;  // toy embedding lexicon
    std::filesystem::path names_a;  // optional first-name frequency lists
    std::filesystem::path names_b;
    std::string prompt_a = "she";
    std::string prompt_b = "he";
    std::uint64_t seed = 7;

    std::string embedding_backend = "toy";
    ToyBackendConfig toy;
    DiscoveryConfig discovery;
    ClassifierTrainConfig classifier;

    FlowArchitecture flow_arch;
    FlowTrainConfig flow_train;
    std::optional<std::size_t> k;
    double k_threshold = 2.0;

    double min_votes = 0.5;

    CorrectionConfig correction;
    std::string discriminator = "toy";
    std::string infiller = "toy";
    double mlm_alpha = 0.1;
    bool include_noop = true;

    GeneratorArchitecture generator_arch;
    GeneratorTrainConfig generator_train;

    std::string scoring_lm = "witten-bell-trigram";

    // Relative paths resolve against the config file's directory.
    static PipelineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
    static PipelineConfig load(const std::filesystem::path& path);

    // Propagates the global seed into every per-stage seed.
    void apply_seed(std::uint64_t s);
};

struct RunOptions {
    std::filesystem::path artifacts = "artifacts";
    bool force = false;
    bool no_correction = false;
    std::optional<std::filesystem::path> manual_dict;
};

enum class StageStatus { ran, up_to_date };

// Effective settings of one stage, hashed into the manifest.
nlohmann::ordered_json stage_config(Stage s, const PipelineConfig& cfg, const RunOptions& opt);

// Throws PreconditionError for missing prerequisites or a config change
// without --force.
StageStatus run_stage(Stage s, const PipelineConfig& cfg, const RunOptions& opt, std::ostream& log);

// Holds <artifacts>/.lock for its lifetime; throws PreconditionError when the
// lock is already taken.
class ArtifactLock {
public:
    explicit ArtifactLock(const std::filesystem::path& artifacts);
    ~ArtifactLock();
    ArtifactLock(const ArtifactLock&) = delete;
    ArtifactLock& operator=(const ArtifactLock&) = delete;

private:
    std::filesystem::path path_;
};

// Writes the bundled synthetic fixture (corpus, eval set, vocabulary,
// lexicon, name lists, config) into dir.
void write_fixture(const std::filesystem::path& dir, std::size_t corpus_docs = 600, std::size_t eval_docs = 120,
                   std::uint64_t seed = 11);

}  // namespace fairflow
