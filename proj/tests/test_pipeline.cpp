#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "metacal/consistency.hpp"
#include "metacal/corpus.hpp"
#include "metacal/digest.hpp"
#include "metacal/errors.hpp"
#include "metacal/jsonl.hpp"
#include "metacal/pipeline.hpp"
#include "metacal/targets.hpp"
#include "support/synthetic.hpp"
#include "support/test_util.hpp"

using namespace metacal;
using testutil::TempDir;

namespace {

std::map<std::string, std::string> artifact_digests(const Json& manifest) {
    std::map<std::string, std::string> digests;
    for (const auto& stage : manifest.at("stages").items()) {
        for (const auto& artifact : stage.value().at("artifacts").items()) {
            digests[artifact.key()] = artifact.value().get<std::string>();
        }
    }
    return digests;
}

Json run_all_stages(const RunConfig& config) {
    Json manifest;
    for (Stage stage : all_stages()) manifest = run_stage(config, stage);
    return manifest;
}

struct CliResult {
    int exit_code = -1;
    std::string output;
};

CliResult run_cli(const std::string& args) {
    const std::string command = std::string(METACAL_CLI_PATH) + " " + args + " 2>&1";
    FILE* pipe = popen(command.c_str(), "r");
    REQUIRE(pipe != nullptr);
    CliResult result;
    std::array<char, 4096> buffer;
    std::size_t got = 0;
    while ((got = fread(buffer.data(), 1, buffer.size(), pipe)) > 0) {
        result.output.append(buffer.data(), got);
    }
    const int status = pclose(pipe);
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return result;
}

}  // namespace

TEST_CASE("stage names round-trip and unknown names are rejected") {
    for (Stage stage : all_stages()) {
        CHECK(stage_from_string(to_string(stage)) == stage);
    }
    CHECK_THROWS_AS(stage_from_string("grade"), ConfigError);
    CHECK_THROWS_AS(backend_kind_from_string("local"), ConfigError);
}

TEST_CASE("derive_seeds is deterministic and per-stage distinct") {
    const StageSeeds a = derive_seeds(42);
    const StageSeeds b = derive_seeds(42);
    CHECK(a.split == b.split);
    CHECK(a.bootstrap == b.bootstrap);
    const std::vector<std::uint64_t> all = {a.split, a.backend, a.balance,   a.targets,
                                            a.pairs, a.multitask, a.eval, a.bootstrap};
    for (std::size_t i = 0; i < all.size(); ++i) {
        for (std::size_t j = i + 1; j < all.size(); ++j) CHECK(all[i] != all[j]);
    }
    CHECK(derive_seeds(43).split != a.split);
}

TEST_CASE("config parsing validates and rejects unknown keys") {
    TempDir dir;
    save_corpus(testutil::synthetic_bank(10), dir.file("bank.jsonl"));
    Json doc{{"corpus", "bank.jsonl"},
             {"out_dir", "run"},
             {"n_train", 6},
             {"n_test", 4},
             {"n_pairs", 5},
             {"n_eval_pairs", 5},
             {"seeds",
              Json{{"split", 1},
                   {"backend", 2},
                   {"balance", 3},
                   {"targets", 4},
                   {"pairs", 5},
                   {"multitask", 6},
                   {"eval", 7},
                   {"bootstrap", 8}}}};

    const RunConfig config = RunConfig::from_json(doc, dir.path());
    CHECK(config.backend == BackendKind::simulated);
    CHECK(config.n_samples == 10);
    CHECK(config.seeds.eval == 7);
    CHECK(config.corpus_path == dir.file("bank.jsonl"));
    CHECK(config.out_dir == dir.file("run"));

    SUBCASE("unknown top-level key") {
        doc["n_questions"] = 5;
        CHECK_THROWS_WITH_AS(RunConfig::from_json(doc, dir.path()),
                             doctest::Contains("unknown key 'n_questions'"), ConfigError);
    }
    SUBCASE("missing seed is named") {
        doc["seeds"].erase("multitask");
        CHECK_THROWS_WITH_AS(RunConfig::from_json(doc, dir.path()),
                             doctest::Contains("multitask"), ConfigError);
    }
    SUBCASE("unknown seed key") {
        doc["seeds"]["extra"] = 9;
        CHECK_THROWS_AS(RunConfig::from_json(doc, dir.path()), ConfigError);
    }
    SUBCASE("missing corpus file") {
        doc["corpus"] = "nope.jsonl";
        CHECK_THROWS_WITH_AS(RunConfig::from_json(doc, dir.path()),
                             doctest::Contains("does not exist"), ConfigError);
    }
    SUBCASE("http backend needs the http section") {
        doc["backend"] = "http";
        CHECK_THROWS_WITH_AS(RunConfig::from_json(doc, dir.path()),
                             doctest::Contains("config.http"), ConfigError);
    }
    SUBCASE("range checks") {
        Json bad = doc;
        bad["max_gap"] = 1.0;
        CHECK_THROWS_AS(RunConfig::from_json(bad, dir.path()), ConfigError);
        bad = doc;
        bad["n_samples"] = 0;
        CHECK_THROWS_AS(RunConfig::from_json(bad, dir.path()), ConfigError);
        bad = doc;
        bad["bins"] = 1;
        CHECK_THROWS_AS(RunConfig::from_json(bad, dir.path()), ConfigError);
        bad = doc;
        bad["bootstrap"] = Json{{"alpha", 0.0}};
        CHECK_THROWS_AS(RunConfig::from_json(bad, dir.path()), ConfigError);
        bad = doc;
        bad["simulated"] = Json{{"p_default", 1.5}};
        CHECK_THROWS_AS(RunConfig::from_json(bad, dir.path()), ConfigError);
    }
    SUBCASE("digest ignores out_dir and parallelism") {
        RunConfig moved = config;
        moved.out_dir = dir.file("elsewhere");
        moved.parallelism = 9;
        CHECK(moved.digest() == config.digest());
        RunConfig reseeded = config;
        reseeded.seeds.eval = 99;
        CHECK(reseeded.digest() != config.digest());
    }
}

TEST_CASE("config survives a save/load round trip") {
    TempDir dir;
    const RunConfig config = testutil::synthetic_config(dir.path(), 20, 12, 8);
    write_json_file(dir.file("config.json"), testutil::config_json(config));
    const RunConfig loaded = RunConfig::load(dir.file("config.json"));
    CHECK(loaded.digest() == config.digest());
    CHECK(loaded.out_dir == config.out_dir);
    CHECK(loaded.parallelism == config.parallelism);
    CHECK(loaded.simulated.p_choices == config.simulated.p_choices);
}

TEST_CASE("full pipeline produces coherent artifacts") {
    TempDir dir;
    RunConfig config = testutil::synthetic_config(dir.path(), 150, 100, 50);
    config.n_pairs = 150;
    config.n_eval_pairs = 80;
    config.simulated.p_choices = {0.1, 0.9};
    const Json manifest = run_all_stages(config);

    CHECK(manifest.at("stages").size() == 7);
    const auto out = config.out_dir;

    // sample: split respects requested sizes, records grade against gold
    const Json split = read_json_file(out / "split.json");
    CHECK(split.at("train_ids").size() == 100);
    CHECK(split.at("test_ids").size() == 50);
    const auto train_records = read_consistency_records(out / "records_train.jsonl");
    CHECK(train_records.size() == 100);
    for (const auto& record : train_records) CHECK(record.n_samples == 10);

    // targets: balanced records and one target per balanced record
    const auto balanced = read_consistency_records(out / "records_train_balanced.jsonl");
    const auto target_lines = read_jsonl(out / "targets_train.jsonl");
    CHECK(balanced.size() == target_lines.size());
    CHECK(balanced.size() <= train_records.size());
    const AccuracyCurve curve = AccuracyCurve::from_json(read_json_file(out / "curve.json"));
    for (const Json& line : target_lines) {
        const ConfidenceTarget target = confidence_target_from_json(line);
        CHECK(std::abs(target.epsilon) <= 0.05);
        CHECK(target.a_of_s == curve.accuracy_at(target.s));
    }

    // build-sft: exported ĉ is byte-equal to the targets artifact
    const auto instances = read_finetune_file(out / "sft_single_train.jsonl");
    REQUIRE(instances.size() == balanced.size());
    for (std::size_t i = 0; i < instances.size(); ++i) {
        const auto [answer, parsed_conf] = parse_single_target(instances[i].target_text);
        const ConfidenceTarget target = confidence_target_from_json(target_lines[i]);
        CHECK(instances[i].question_ids == std::vector<std::string>{target.question_id});
        CHECK(std::abs(parsed_conf - target.target) <= 0.005 + 1e-12);
    }

    // build-pairs: multitask holds exactly the single+pair instances
    const auto pair_lines = read_jsonl(out / "pairs_train.jsonl");
    CHECK(pair_lines.size() == 150);
    const auto mixed = read_finetune_file(out / "sft_multitask_train.jsonl");
    CHECK(mixed.size() == instances.size() + 150);

    // eval: spec smoke check, metrics JSON carries ece and auc fields
    const Json before = read_json_file(out / "metrics_before.json");
    const Json after = read_json_file(out / "metrics_after.json");
    for (const Json& doc : {before, after}) {
        CHECK(doc.contains("ece"));
        CHECK(doc.contains("auc"));
        CHECK(doc.at("bins").size() == 11);
    }
    CHECK(before.at("n") == 50);
    CHECK(before.at("auc_c").is_null());
    CHECK(after.at("auc_c") == 1.0);  // choice driven by the s latent itself
    CHECK(after.at("ece").get<double>() < before.at("ece").get<double>());

    // bootstrap + report: stars in the table match the significance flags
    const Json bootstrap_doc = read_json_file(out / "bootstrap.json");
    REQUIRE(bootstrap_doc.size() == 2);
    const std::string report = testutil::read_text(out / "report.txt");
    for (const Json& entry : bootstrap_doc) {
        char with_star[64];
        std::snprintf(with_star, sizeof(with_star), "%.4f *", entry.at("delta").get<double>());
        CHECK((report.find(with_star) != std::string::npos) ==
              entry.at("significant").get<bool>());
    }
    // With the bimodal bank the discrimination gain is unambiguous.
    CHECK(bootstrap_doc[1].at("metric") == "auc");
    CHECK(bootstrap_doc[1].at("significant") == true);
    CHECK(report.find("* = CI excludes zero") != std::string::npos);

    const std::string csv = testutil::read_text(out / "reliability_before.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 12);  // header + 11 bins

    // every artifact the manifest lists verifies against disk
    verify_artifacts(manifest, out);
}

TEST_CASE("pipeline reruns are byte-identical") {
    TempDir dir;
    RunConfig config = testutil::synthetic_config(dir.path(), 60, 40, 20);
    config.n_pairs = 40;
    config.n_eval_pairs = 30;
    const Json first = run_all_stages(config);

    RunConfig again = config;
    again.out_dir = dir.file("run_b");
    again.parallelism = 1;  // schedule must not leak into artifacts
    const Json second = run_all_stages(again);
    CHECK(artifact_digests(first) == artifact_digests(second));

    // Rerunning a stage in place over its own outputs is also stable.
    const Json resumed = run_stage(config, Stage::targets);
    CHECK(artifact_digests(resumed) == artifact_digests(first));
}

TEST_CASE("different seeds change sampling artifacts") {
    TempDir dir;
    RunConfig config = testutil::synthetic_config(dir.path(), 40, 30, 10);
    run_stage(config, Stage::sample);
    RunConfig other = config;
    other.seeds = derive_seeds(43);
    other.out_dir = dir.file("run_b");
    run_stage(other, Stage::sample);
    CHECK(sha256_file(config.out_dir / "records_train.jsonl") !=
          sha256_file(other.out_dir / "records_train.jsonl"));
}

TEST_CASE("stages refuse to run without their upstream artifacts") {
    TempDir dir;
    const RunConfig config = testutil::synthetic_config(dir.path(), 20, 12, 8);
    CHECK_THROWS_WITH_AS(run_stage(config, Stage::targets), doctest::Contains("stage 'sample'"),
                         DependencyError);
    CHECK_THROWS_WITH_AS(run_stage(config, Stage::report), doctest::Contains("stage 'eval'"),
                         DependencyError);
}

TEST_CASE("a run directory rejects a different config") {
    TempDir dir;
    RunConfig config = testutil::synthetic_config(dir.path(), 20, 12, 8);
    run_stage(config, Stage::sample);
    RunConfig other = config;
    other.max_gap = 0.35;
    CHECK_THROWS_WITH_AS(run_stage(other, Stage::targets),
                         doctest::Contains("different config"), ConfigError);
}

TEST_CASE("report refuses tampered artifacts") {
    TempDir dir;
    RunConfig config = testutil::synthetic_config(dir.path(), 60, 40, 20);
    config.n_pairs = 40;
    config.n_eval_pairs = 20;
    const Json manifest = run_all_stages(config);

    std::string text = testutil::read_text(config.out_dir / "reports_after.jsonl");
    const auto pos = text.find("\"correct\":true");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 14, "\"correct\":false");
    testutil::write_text(config.out_dir / "reports_after.jsonl", text);

    CHECK_THROWS_WITH_AS(run_stage(config, Stage::report),
                         doctest::Contains("reports_after.jsonl"), DependencyError);
    CHECK_THROWS_AS(verify_artifacts(manifest, config.out_dir), DependencyError);
}

TEST_CASE("build-pairs propagates the no-permissible-pairs error") {
    TempDir dir;
    RunConfig config = testutil::synthetic_config(dir.path(), 30, 20, 10);
    config.n_pairs = 10;
    config.simulated.p_choices = {1.0};  // every record lands at s = 1.0
    run_stage(config, Stage::sample);
    run_stage(config, Stage::targets);
    run_stage(config, Stage::build_sft);
    CHECK_THROWS_WITH_AS(run_stage(config, Stage::build_pairs),
                         doctest::Contains("no permissible pairs"), ConfigError);
}

TEST_CASE("eval without held-out questions is a config error") {
    TempDir dir;
    RunConfig config = testutil::synthetic_config(dir.path(), 20, 12, 0);
    run_stage(config, Stage::sample);
    run_stage(config, Stage::targets);
    CHECK_THROWS_WITH_AS(run_stage(config, Stage::eval), doctest::Contains("held-out"),
                         ConfigError);
}

TEST_CASE("cli maps outcomes to documented exit codes") {
    TempDir dir;
    RunConfig config = testutil::synthetic_config(dir.path(), 60, 40, 20);
    config.n_pairs = 40;
    config.n_eval_pairs = 20;
    write_json_file(dir.file("config.json"), testutil::config_json(config));
    const std::string config_flag = "--config " + dir.file("config.json").string();

    SUBCASE("success and report echo") {
        const CliResult all = run_cli(config_flag + " --stage all");
        CHECK(all.exit_code == 0);
        CHECK(all.output.find("stage report") != std::string::npos);
        CHECK(all.output.find("paired bootstrap") != std::string::npos);
    }
    SUBCASE("unknown stage is a config error") {
        const CliResult result = run_cli(config_flag + " --stage grade");
        CHECK(result.exit_code == 2);
        CHECK(result.output.find("\"error\":\"config\"") != std::string::npos);
    }
    SUBCASE("unknown flag is a config error") {
        const CliResult result = run_cli(config_flag + " --stage sample --frobnicate");
        CHECK(result.exit_code == 2);
    }
    SUBCASE("missing config file is a config error") {
        const CliResult result = run_cli("--config " + dir.file("nope.json").string() +
                                         " --stage sample");
        CHECK(result.exit_code == 2);
        CHECK(result.output.find("does not exist") != std::string::npos);
    }
    SUBCASE("missing upstream artifacts exit 3") {
        const CliResult result = run_cli(config_flag + " --stage eval --out " +
                                         dir.file("fresh").string());
        CHECK(result.exit_code == 3);
        CHECK(result.output.find("\"error\":\"dependency\"") != std::string::npos);
    }
    SUBCASE("no permissible pairs reaches the shell as exit 2") {
        RunConfig flat = config;
        flat.simulated.p_choices = {1.0};
        flat.out_dir = dir.file("run_flat");
        write_json_file(dir.file("config_flat.json"), testutil::config_json(flat));
        const std::string flag = "--config " + dir.file("config_flat.json").string();
        CHECK(run_cli(flag + " --stage sample").exit_code == 0);
        CHECK(run_cli(flag + " --stage targets").exit_code == 0);
        CHECK(run_cli(flag + " --stage build-sft").exit_code == 0);
        const CliResult result = run_cli(flag + " --stage build-pairs");
        CHECK(result.exit_code == 2);
        CHECK(result.output.find("no permissible pairs") != std::string::npos);
    }
    SUBCASE("master seed override replaces every stage seed") {
        const CliResult seeded = run_cli(config_flag + " --stage sample --seed 7 --out " +
                                         dir.file("run_s7").string());
        CHECK(seeded.exit_code == 0);
        const Json manifest = read_json_file(dir.file("run_s7") / "manifest.json");
        const StageSeeds expected = derive_seeds(7);
        CHECK(manifest.at("config").at("seeds").at("split") == expected.split);
        CHECK(manifest.at("config").at("seeds").at("bootstrap") == expected.bootstrap);
    }
    SUBCASE("help exits cleanly") {
        CHECK(run_cli("--help").exit_code == 0);
    }
}
