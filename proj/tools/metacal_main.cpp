#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "metacal/errors.hpp"
#include "metacal/jsonl.hpp"
#include "metacal/pipeline.hpp"

namespace {

// One machine-readable line on stderr per failure, then the documented exit
// code: 2 config, 3 dependency, 4 backend, 5 metric-undefined.
int fail(const char* kind, const std::string& message, int code) {
    std::cerr << metacal::to_jsonl_line(
                     metacal::Json{{"error", kind}, {"message", message}})
              << "\n";
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"metacal: verbalized-confidence calibration pipeline"};
    app.set_version_flag("--version", METACAL_VERSION);

    std::string config_path;
    std::string stage_name;
    std::string backend_name;
    std::optional<std::uint64_t> master_seed;
    std::optional<int> parallelism;
    std::string out_dir;

    app.add_option("--config", config_path, "Run config JSON file")->required();
    app.add_option("--stage", stage_name,
                   "Pipeline stage: sample, targets, build-sft, build-pairs, eval, bootstrap, "
                   "report, or all")
        ->required();
    app.add_option("--backend", backend_name, "Override the configured backend");
    app.add_option("--seed", master_seed,
                   "Replace every configured stage seed with forks of this master seed");
    app.add_option("--parallelism", parallelism, "Override the configured worker count");
    app.add_option("--out", out_dir, "Override the configured output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // Exit code 0 is the help/version print path; real flag errors map
        // to the config exit code.
        if (e.get_exit_code() == 0) return app.exit(e);
        return fail("config", e.what(), 2);
    }

    try {
        metacal::RunConfig config = metacal::RunConfig::load(config_path);
        if (!backend_name.empty()) {
            config.backend = metacal::backend_kind_from_string(backend_name);
            if (config.backend == metacal::BackendKind::http && !config.http) {
                throw metacal::ConfigError("backend 'http' requires a config.http section");
            }
        }
        if (master_seed) config.seeds = metacal::derive_seeds(*master_seed);
        if (parallelism) {
            if (*parallelism < 1) throw metacal::ConfigError("parallelism must be >= 1");
            config.parallelism = *parallelism;
        }
        if (!out_dir.empty()) config.out_dir = out_dir;

        std::vector<metacal::Stage> stages;
        if (stage_name == "all") {
            stages = metacal::all_stages();
        } else {
            stages.push_back(metacal::stage_from_string(stage_name));
        }
        for (metacal::Stage stage : stages) {
            const metacal::Json manifest = metacal::run_stage(config, stage);
            const metacal::Json& entry = manifest.at("stages").at(metacal::to_string(stage));
            std::cout << "stage " << metacal::to_string(stage) << ": wrote "
                      << entry.at("artifacts").size() << " artifacts to "
                      << config.out_dir.string() << "\n";
        }
        if (stages.back() == metacal::Stage::report) {
            std::ifstream report(config.out_dir / "report.txt");
            std::cout << report.rdbuf();
        }
        return 0;
    } catch (const metacal::ConfigError& e) {
        return fail("config", e.what(), 2);
    } catch (const metacal::DependencyError& e) {
        return fail("dependency", e.what(), 3);
    } catch (const metacal::BackendError& e) {
        return fail("backend", e.what(), 4);
    } catch (const metacal::MetricUndefinedError& e) {
        return fail("metric-undefined", e.what(), 5);
    } catch (const std::exception& e) {
        return fail("internal", e.what(), 1);
    }
}
