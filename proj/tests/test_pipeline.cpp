#include "fairflow/errors.hpp"
#include "fairflow/io.hpp"
#include "fairflow/pipeline.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <set>
#include <sstream>

using namespace fairflow;
namespace fs = std::filesystem;

namespace {

// Small fixture with short training schedules so the whole pipeline runs in seconds.
fs::path small_fixture() {
    static const fs::path dir = [] {
        const auto d = testing::temp_dir("pipeline-fixture");
        write_fixture(d, 150, 30, 11);
        auto j = nlohmann::json::parse(io::read_file(d / "config.json"));
        j["classifier"]["max_epochs"] = 50;
        j["flow"]["epochs"] = 30;
        j["generator"]["width"] = 16;
        j["generator"]["heads"] = 2;
        j["generator"]["encoder_layers"] = 1;
        j["generator"]["decoder_layers"] = 1;
        j["generator"]["epochs"] = 2;
        io::write_file_atomic(d / "config.json", j.dump(2) + "\n");
        return d;
    }();
    return dir;
}

PipelineConfig small_config() { return PipelineConfig::load(small_fixture() / "config.json"); }

void run_all(const PipelineConfig& cfg, const RunOptions& opt, std::ostream& log) {
    for (Stage s : all_stages()) run_stage(s, cfg, opt, log);
}

// Artifacts of one full run, shared across test cases.
fs::path completed_run() {
    static const fs::path dir = [] {
        const auto d = testing::temp_dir("pipeline-run");
        RunOptions opt;
        opt.artifacts = d;
        std::ostringstream log;
        run_all(small_config(), opt, log);
        return d;
    }();
    return dir;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string("\"") + FAIRFLOW_CLI_PATH + "\" " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::set<std::string> tree_files(const fs::path& root) {
    std::set<std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file() && e.path().filename() != ".lock") files.insert(fs::relative(e.path(), root).string());
    }
    return files;
}

}  // namespace

TEST_CASE("stage names round trip") {
    CHECK(all_stages().size() == 7);
    for (Stage s : all_stages()) {
        const auto parsed = parse_stage(stage_name(s));
        REQUIRE(parsed);
        CHECK(*parsed == s);
    }
    CHECK(std::string(stage_name(Stage::build_dict)) == "build-dict");
    CHECK_FALSE(parse_stage("build_dict"));
    CHECK_FALSE(parse_stage(""));
}

TEST_CASE("missing upstream artifact names the producing stage") {
    const auto dir = testing::temp_dir("pipeline-missing");
    RunOptions opt;
    opt.artifacts = dir;
    std::ostringstream log;
    try {
        run_stage(Stage::build_parallel, small_config(), opt, log);
        FAIL("expected PreconditionError");
    } catch (const PreconditionError& e) {
        CHECK(std::string(e.what()).find("build-dict") != std::string::npos);
    }
    const auto cfg = (small_fixture() / "config.json").string();
    CHECK(run_cli("--config \"" + cfg + "\" --artifacts \"" + dir.string() + "\" build-parallel") == 2);
    CHECK_FALSE(fs::exists(dir / ".lock"));
}

TEST_CASE("manifest records hashes of every input and output") {
    const auto dir = completed_run();
    const auto m = nlohmann::json::parse(io::read_file(dir / "manifest.json"));
    for (Stage s : all_stages()) {
        const std::string name = stage_name(s);
        REQUIRE(m["stages"].contains(name));
        const auto& entry = m["stages"][name];
        CHECK(entry["config_hash"].get<std::string>() == io::sha256_hex(stage_config(s, small_config(), RunOptions{dir}).dump()));
        CHECK_FALSE(entry["outputs"].empty());
        for (const auto& [rel, hash] : entry["outputs"].items()) {
            REQUIRE(fs::exists(dir / rel));
            CHECK(io::sha256_file(dir / rel) == hash.get<std::string>());
        }
        for (const auto& [role, hash] : entry["inputs"].items()) CHECK(hash.get<std::string>().size() == 64);
    }
    CHECK(m["stages"]["build-parallel"]["inputs"]["build-dict/dictionary.tsv"] ==
          m["stages"]["build-dict"]["outputs"]["build-dict/dictionary.tsv"]);
    CHECK(fs::exists(dir / "evaluate" / "report.json"));
}

TEST_CASE("rerun with unchanged config is a no-op") {
    const auto dir = completed_run();
    RunOptions opt;
    opt.artifacts = dir;
    const auto before = io::read_file(dir / "manifest.json");
    for (Stage s : all_stages()) {
        std::ostringstream log;
        CHECK(run_stage(s, small_config(), opt, log) == StageStatus::up_to_date);
        CHECK(log.str() == std::string(stage_name(s)) + ": up to date\n");
    }
    CHECK(io::read_file(dir / "manifest.json") == before);
}

TEST_CASE("changed config is refused without force") {
    const auto dir = testing::temp_dir("pipeline-force");
    RunOptions opt;
    opt.artifacts = dir;
    std::ostringstream log;
    auto cfg = small_config();
    run_stage(Stage::discover, cfg, opt, log);
    cfg.discovery.threshold_phi = 0.95;
    try {
        run_stage(Stage::discover, cfg, opt, log);
        FAIL("expected PreconditionError");
    } catch (const PreconditionError& e) {
        CHECK(std::string(e.what()).find("--force") != std::string::npos);
    }
    opt.force = true;
    CHECK(run_stage(Stage::discover, cfg, opt, log) == StageStatus::ran);
    const auto m = nlohmann::json::parse(io::read_file(dir / "manifest.json"));
    CHECK(m["stages"]["discover"]["config"]["discovery"]["phi"].get<double>() == doctest::Approx(0.95));
}

TEST_CASE("stale upstream output triggers a rerun") {
    const auto dir = testing::temp_dir("pipeline-stale");
    RunOptions opt;
    opt.artifacts = dir;
    std::ostringstream log;
    const auto cfg = small_config();
    run_stage(Stage::discover, cfg, opt, log);
    io::write_file_atomic(dir / "discover" / "discovered.json", "tampered\n");
    CHECK(run_stage(Stage::discover, cfg, opt, log) == StageStatus::ran);
}

TEST_CASE("two runs with the same seed are byte-identical") {
    const auto first = completed_run();
    const auto second = testing::temp_dir("pipeline-run-2");
    const auto cfg = (small_fixture() / "config.json").string();
    REQUIRE(run_cli("--config \"" + cfg + "\" --artifacts \"" + second.string() + "\" run-all") == 0);
    const auto files = tree_files(first);
    CHECK(files == tree_files(second));
    for (const auto& f : files) {
        INFO(f);
        CHECK(io::read_file(first / f) == io::read_file(second / f));
    }
}

TEST_CASE("artifact lock excludes concurrent runs") {
    const auto dir = testing::temp_dir("pipeline-lock");
    {
        ArtifactLock lock(dir);
        CHECK(fs::exists(dir / ".lock"));
        CHECK_THROWS_AS(ArtifactLock{dir}, PreconditionError);
        const auto cfg = (small_fixture() / "config.json").string();
        CHECK(run_cli("--config \"" + cfg + "\" --artifacts \"" + dir.string() + "\" discover") == 2);
        CHECK_FALSE(fs::exists(dir / "discover"));
    }
    CHECK_FALSE(fs::exists(dir / ".lock"));
    ArtifactLock again(dir);
}

TEST_CASE("seed override changes every seeded stage hash") {
    const auto base = small_config();
    auto reseeded = base;
    reseeded.apply_seed(base.seed + 1);
    const RunOptions opt;
    CHECK(stage_config(Stage::train_flow, base, opt).dump() != stage_config(Stage::train_flow, reseeded, opt).dump());
    CHECK(stage_config(Stage::train_generator, base, opt).dump() !=
          stage_config(Stage::train_generator, reseeded, opt).dump());
    auto same = base;
    same.apply_seed(base.seed);
    CHECK(stage_config(Stage::train_flow, base, opt).dump() == stage_config(Stage::train_flow, same, opt).dump());
}

TEST_CASE("manual dictionary replaces the discovered one") {
    const auto dir = testing::temp_dir("pipeline-manual");
    const auto dict = dir / "manual.tsv";
    io::write_file_atomic(dict, io::read_file(completed_run() / "build-dict" / "dictionary.tsv"));
    RunOptions opt;
    opt.artifacts = dir / "artifacts";
    opt.manual_dict = dict;
    std::ostringstream log;
    CHECK(run_stage(Stage::build_dict, small_config(), opt, log) == StageStatus::ran);
    CHECK(run_stage(Stage::build_parallel, small_config(), opt, log) == StageStatus::ran);
    CHECK_FALSE(fs::exists(opt.artifacts / "discover"));
    CHECK_FALSE(fs::exists(opt.artifacts / "train-flow"));
    const auto m = nlohmann::json::parse(io::read_file(opt.artifacts / "manifest.json"));
    CHECK(m["stages"]["build-dict"]["inputs"].size() == 1);
    CHECK(m["stages"]["build-dict"]["inputs"]["manual_dict"].get<std::string>() == io::sha256_file(dict));
    CHECK(io::read_file(opt.artifacts / "build-dict" / "dictionary.tsv") == io::read_file(dict));
    CHECK(io::read_file(opt.artifacts / "build-parallel" / "parallel.jsonl") ==
          io::read_file(completed_run() / "build-parallel" / "parallel.jsonl"));
}

TEST_CASE("cli exit codes") {
    const auto dir = testing::temp_dir("pipeline-cli");
    CHECK(run_cli("--no-such-option discover") == 2);
    CHECK(run_cli("") == 2);
    CHECK(run_cli("discover") == 2);

    const auto ok = dir / "ok.jsonl";
    io::write_file_atomic(ok, "{\"pred\":1,\"label\":1,\"group\":\"a\"}\n{\"pred\":0,\"label\":0,\"group\":\"a\"}\n"
                              "{\"pred\":1,\"label\":1,\"group\":\"b\"}\n{\"pred\":1,\"label\":0,\"group\":\"b\"}\n");
    CHECK(run_cli("fairness --predictions \"" + ok.string() + "\"") == 0);
    const auto undefined = dir / "undefined.jsonl";
    io::write_file_atomic(undefined, "{\"pred\":1,\"label\":1,\"group\":\"a\"}\n{\"pred\":0,\"label\":0,\"group\":\"b\"}\n");
    CHECK(run_cli("fairness --predictions \"" + undefined.string() + "\"") == 2);
    const auto malformed = dir / "malformed.jsonl";
    io::write_file_atomic(malformed, "{\"pred\":1}\n");
    CHECK(run_cli("fairness --predictions \"" + malformed.string() + "\"") == 2);

    const auto pool = dir / "pool.jsonl";
    std::string rows;
    for (int i = 0; i < 40; ++i) {
        rows += "{\"id\":\"d" + std::to_string(i) + "\",\"text\":\"x\",\"label\":" + std::to_string(i % 2) +
                ",\"group\":\"" + (i % 4 < 2 ? "a" : "b") + "\"}\n";
    }
    io::write_file_atomic(pool, rows);
    const auto out = dir / "sample.jsonl";
    CHECK(run_cli("bias-sample --input \"" + pool.string() + "\" --output \"" + out.string() +
                  "\" --n 8 --positive 0.5 --female-in-positive 0.25") == 0);
    CHECK(fs::exists(out));
    CHECK(run_cli("bias-sample --input \"" + pool.string() + "\" --output \"" + out.string() + "\" --n 8 --positive 1.5") == 2);
}
