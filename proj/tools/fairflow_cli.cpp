#include "fairflow/errors.hpp"
#include "fairflow/eval.hpp"
#include "fairflow/fixtures.hpp"
#include "fairflow/io.hpp"
#include "fairflow/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace fairflow;

namespace {

constexpr int kExitPrecondition = 2;
constexpr int kExitRuntime = 1;

PipelineConfig load_config(const std::string& path, const std::optional<std::uint64_t>& seed) {
    if (path.empty()) throw PreconditionError("--config is required for pipeline stages");
    auto cfg = PipelineConfig::load(path);
    if (seed) cfg.apply_seed(*seed);
    return cfg;
}

int run_stages(const std::vector<Stage>& stages, const std::string& config_path,
               const std::optional<std::uint64_t>& seed, const RunOptions& opt) {
    const auto cfg = load_config(config_path, seed);
    ArtifactLock lock(opt.artifacts);
    for (Stage s : stages) run_stage(s, cfg, opt, std::cout);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Counterfactual text augmentation pipeline"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::optional<std::uint64_t> seed;
    RunOptions opt;
    std::string artifacts = "artifacts";
    std::string manual_dict;
    app.add_option("--config", config_path, "pipeline config JSON");
    app.add_option("--seed", seed, "override the global seed");
    app.add_flag("--force", opt.force, "rerun a stage whose configuration changed");
    app.add_option("--artifacts", artifacts, "artifact directory")->capture_default_str();
    app.add_flag("--no-correction", opt.no_correction, "skip error correction when building the parallel corpus");
    app.add_option("--manual-dict", manual_dict, "use this dictionary TSV instead of the discovered one");

    std::vector<std::pair<CLI::App*, Stage>> stage_cmds;
    for (Stage s : all_stages()) {
        stage_cmds.emplace_back(app.add_subcommand(stage_name(s), std::string("run the ") + stage_name(s) + " stage"), s);
    }
    auto* run_all = app.add_subcommand("run-all", "run every stage in order");

    auto* make_fixture = app.add_subcommand("make-fixture", "write the synthetic fixture files");
    std::string fixture_dir;
    std::size_t fixture_docs = 600, fixture_eval = 120;
    std::uint64_t fixture_seed = 11;
    make_fixture->add_option("--out", fixture_dir, "output directory")->required();
    make_fixture->add_option("--docs", fixture_docs)->capture_default_str();
    make_fixture->add_option("--eval-docs", fixture_eval)->capture_default_str();
    make_fixture->add_option("--fixture-seed", fixture_seed)->capture_default_str();

    auto* bias = app.add_subcommand("bias-sample", "draw a label/gender-imbalanced training sample");
    std::string bias_in, bias_out;
    BiasSampleSpec spec;
    std::optional<double> female_neg;
    bias->add_option("--input", bias_in, "JSONL with text, label and group")->required();
    bias->add_option("--output", bias_out, "output JSONL")->required();
    bias->add_option("--n", spec.n)->required();
    bias->add_option("--positive", spec.positive_fraction)->capture_default_str();
    bias->add_option("--female-in-positive", spec.female_in_positive_fraction)->capture_default_str();
    bias->add_option("--female-in-negative", female_neg);

    auto* fairness = app.add_subcommand("fairness", "TPRD/FPRD/accuracy/F1 from a predictions JSONL");
    std::string predictions;
    fairness->add_option("--predictions", predictions, "JSONL rows with pred, label, group")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitPrecondition;
    }
    opt.artifacts = artifacts;
    if (!manual_dict.empty()) opt.manual_dict = manual_dict;

    try {
        for (const auto& [cmd, stage] : stage_cmds) {
            if (cmd->parsed()) return run_stages({stage}, config_path, seed, opt);
        }
        if (run_all->parsed()) return run_stages(all_stages(), config_path, seed, opt);
        if (make_fixture->parsed()) {
            write_fixture(fixture_dir, fixture_docs, fixture_eval, fixture_seed);
            std::cout << "fixture written to " << fixture_dir << "\n";
            return 0;
        }
        if (bias->parsed()) {
            spec.female_in_negative_fraction = female_neg;
            spec.seed = seed.value_or(0);
            const auto sample = induce_bias_sample(read_raw_documents(bias_in, CorpusFormat::jsonl), spec);
            io::write_file_atomic(bias_out, fixtures::to_jsonl(sample));
            const auto c = tally_cells(sample);
            std::cout << "female positive " << c.female_positive << ", male positive " << c.male_positive
                      << ", female negative " << c.female_negative << ", male negative " << c.male_negative << "\n";
            return 0;
        }
        if (fairness->parsed()) {
            const auto p = parse_predictions_jsonl(io::read_file(predictions));
            auto j = tprd_fprd(p.predictions, p.labels, p.groups).to_json();
            const auto af = accuracy_f1(p.predictions, p.labels);
            if (af.warning) std::cerr << "warning: " << *af.warning << "\n";
            std::cout << j.dump(2) << "\n";
            return 0;
        }
    } catch (const PreconditionError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitPrecondition;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitPrecondition;
    } catch (const UndefinedMetric& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitPrecondition;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return 0;
}
