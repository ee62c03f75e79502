#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "metacal/jsonl.hpp"

namespace metacal {

// Pipeline stages in dependency order. Each stage reads the artifacts of its
// prerequisites from the run directory and writes its own, updating the run
// manifest with content digests.
enum class Stage { sample, targets, build_sft, build_pairs, eval, bootstrap, report };

const char* to_string(Stage stage);
Stage stage_from_string(const std::string& name);
const std::vector<Stage>& all_stages();

enum class BackendKind { simulated, http };

const char* to_string(BackendKind kind);
BackendKind backend_kind_from_string(const std::string& name);

// Every random stage carries its own named seed; a missing one is a config
// error, never a silent default.
struct StageSeeds {
    std::uint64_t split = 0;
    std::uint64_t backend = 0;
    std::uint64_t balance = 0;
    std::uint64_t targets = 0;
    std::uint64_t pairs = 0;
    std::uint64_t multitask = 0;
    std::uint64_t eval = 0;
    std::uint64_t bootstrap = 0;
};

// Derives a full seed set from one master value, one named fork per stage.
StageSeeds derive_seeds(std::uint64_t master);

struct SimulatedSection {
    double p_default = 0.5;
    // Question i (corpus order) gets p_choices[i % size] when nonempty;
    // p_overrides wins by id. Declarative way to build heterogeneous banks.
    std::vector<double> p_choices;
    std::unordered_map<std::string, double> p_overrides;
    int distractor_count = 1;
    double fixed_confidence = 0.9;  // baseline verbalizer
};

struct HttpSection {
    std::string base_url;
    std::string model_before;
    std::string model_after;
    std::string api_key_env = "METACAL_API_KEY";
};

struct BootstrapSection {
    int resamples = 1000;
    double alpha = 0.05;
};

struct RunConfig {
    std::filesystem::path corpus_path;
    BackendKind backend = BackendKind::simulated;
    int n_samples = 10;
    double temperature = 1.0;
    double max_gap = 0.20;
    std::size_t n_train = 0;
    std::size_t n_test = 0;
    int n_pairs = 0;
    int n_eval_pairs = 0;
    int parallelism = 1;
    std::size_t bins = 11;
    std::filesystem::path out_dir;
    StageSeeds seeds;
    BootstrapSection bootstrap;
    SimulatedSection simulated;
    std::optional<HttpSection> http;

    // Parses and fully validates a config document; unknown keys are
    // rejected. Relative paths resolve against base_dir.
    static RunConfig from_json(const Json& doc, const std::filesystem::path& base_dir);
    static RunConfig load(const std::filesystem::path& path);

    // Canonical snapshot of everything that determines artifact bytes.
    // out_dir and parallelism are deliberately absent: they relocate or
    // reschedule the run without changing its outputs.
    Json to_json() const;
    std::string digest() const;
};

// Loads the run manifest, creating a fresh one when absent. Throws
// ConfigError when the directory was produced under a different config.
Json load_or_init_manifest(const RunConfig& config);

// Digest-checks every artifact recorded in the manifest against the files
// on disk; DependencyError on a missing or altered file.
void verify_artifacts(const Json& manifest, const std::filesystem::path& out_dir);

// Runs one stage: checks prerequisites, writes stage artifacts under
// config.out_dir, records their digests in manifest.json, and returns the
// updated manifest.
Json run_stage(const RunConfig& config, Stage stage);

}  // namespace metacal
