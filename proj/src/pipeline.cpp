#include "metacal/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <utility>

#include "metacal/consistency.hpp"
#include "metacal/corpus.hpp"
#include "metacal/digest.hpp"
#include "metacal/errors.hpp"
#include "metacal/gateway.hpp"
#include "metacal/http_backend.hpp"
#include "metacal/metrics.hpp"
#include "metacal/parallel.hpp"
#include "metacal/rng.hpp"
#include "metacal/simulated_backend.hpp"
#include "metacal/stats.hpp"
#include "metacal/targets.hpp"

#ifndef METACAL_VERSION
#define METACAL_VERSION "0.0.0"
#endif

namespace metacal {

namespace fs = std::filesystem;

const char* to_string(Stage stage) {
    switch (stage) {
        case Stage::sample: return "sample";
        case Stage::targets: return "targets";
        case Stage::build_sft: return "build-sft";
        case Stage::build_pairs: return "build-pairs";
        case Stage::eval: return "eval";
        case Stage::bootstrap: return "bootstrap";
        case Stage::report: return "report";
    }
    throw ConfigError("unreachable stage value");
}

Stage stage_from_string(const std::string& name) {
    for (Stage stage : all_stages()) {
        if (name == to_string(stage)) return stage;
    }
    throw ConfigError("unknown stage '" + name +
                      "'; expected one of sample, targets, build-sft, build-pairs, eval, "
                      "bootstrap, report");
}

const std::vector<Stage>& all_stages() {
    static const std::vector<Stage> stages = {Stage::sample,    Stage::targets, Stage::build_sft,
                                              Stage::build_pairs, Stage::eval,  Stage::bootstrap,
                                              Stage::report};
    return stages;
}

const char* to_string(BackendKind kind) {
    return kind == BackendKind::simulated ? "simulated" : "http";
}

BackendKind backend_kind_from_string(const std::string& name) {
    if (name == "simulated") return BackendKind::simulated;
    if (name == "http") return BackendKind::http;
    throw ConfigError("unknown backend '" + name + "'; expected simulated or http");
}

StageSeeds derive_seeds(std::uint64_t master) {
    const RngStream root(master);
    StageSeeds seeds;
    seeds.split = root.fork("split").next_u64();
    seeds.backend = root.fork("backend").next_u64();
    seeds.balance = root.fork("balance").next_u64();
    seeds.targets = root.fork("targets").next_u64();
    seeds.pairs = root.fork("pairs").next_u64();
    seeds.multitask = root.fork("multitask").next_u64();
    seeds.eval = root.fork("eval").next_u64();
    seeds.bootstrap = root.fork("bootstrap").next_u64();
    return seeds;
}

namespace {

void expect_keys(const Json& doc, const std::string& where, const std::set<std::string>& allowed) {
    if (!doc.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& item : doc.items()) {
        if (!allowed.count(item.key())) {
            throw ConfigError(where + " has unknown key '" + item.key() + "'");
        }
    }
}

template <typename T>
T get_field(const Json& doc, const std::string& where, const std::string& key, T fallback) {
    if (!doc.contains(key)) return fallback;
    try {
        return doc.at(key).get<T>();
    } catch (const Json::exception&) {
        throw ConfigError(where + " key '" + key + "' has the wrong type");
    }
}

template <typename T>
T need_field(const Json& doc, const std::string& where, const std::string& key) {
    if (!doc.contains(key)) throw ConfigError(where + " is missing required key '" + key + "'");
    try {
        return doc.at(key).get<T>();
    } catch (const Json::exception&) {
        throw ConfigError(where + " key '" + key + "' has the wrong type");
    }
}

void check_unit(double v, const std::string& what) {
    if (!(v >= 0.0 && v <= 1.0)) {
        throw ConfigError(what + " must lie in [0,1], got " + std::to_string(v));
    }
}

StageSeeds parse_seeds(const Json& doc) {
    expect_keys(doc, "config.seeds",
                {"split", "backend", "balance", "targets", "pairs", "multitask", "eval",
                 "bootstrap"});
    StageSeeds seeds;
    seeds.split = need_field<std::uint64_t>(doc, "config.seeds", "split");
    seeds.backend = need_field<std::uint64_t>(doc, "config.seeds", "backend");
    seeds.balance = need_field<std::uint64_t>(doc, "config.seeds", "balance");
    seeds.targets = need_field<std::uint64_t>(doc, "config.seeds", "targets");
    seeds.pairs = need_field<std::uint64_t>(doc, "config.seeds", "pairs");
    seeds.multitask = need_field<std::uint64_t>(doc, "config.seeds", "multitask");
    seeds.eval = need_field<std::uint64_t>(doc, "config.seeds", "eval");
    seeds.bootstrap = need_field<std::uint64_t>(doc, "config.seeds", "bootstrap");
    return seeds;
}

SimulatedSection parse_simulated(const Json& doc) {
    expect_keys(doc, "config.simulated",
                {"p_default", "p_choices", "p_overrides", "distractor_count",
                 "fixed_confidence"});
    SimulatedSection sim;
    sim.p_default = get_field<double>(doc, "config.simulated", "p_default", sim.p_default);
    check_unit(sim.p_default, "config.simulated.p_default");
    if (doc.contains("p_choices")) {
        try {
            sim.p_choices = doc.at("p_choices").get<std::vector<double>>();
        } catch (const Json::exception&) {
            throw ConfigError("config.simulated.p_choices must be an array of numbers");
        }
        for (double p : sim.p_choices) check_unit(p, "config.simulated.p_choices entry");
    }
    if (doc.contains("p_overrides")) {
        if (!doc.at("p_overrides").is_object()) {
            throw ConfigError("config.simulated.p_overrides must be an object of id -> p");
        }
        for (const auto& item : doc.at("p_overrides").items()) {
            double p = 0.0;
            try {
                p = item.value().get<double>();
            } catch (const Json::exception&) {
                throw ConfigError("config.simulated.p_overrides['" + item.key() +
                                  "'] must be a number");
            }
            check_unit(p, "config.simulated.p_overrides['" + item.key() + "']");
            sim.p_overrides[item.key()] = p;
        }
    }
    sim.distractor_count =
        get_field<int>(doc, "config.simulated", "distractor_count", sim.distractor_count);
    if (sim.distractor_count < 1) {
        throw ConfigError("config.simulated.distractor_count must be >= 1");
    }
    sim.fixed_confidence =
        get_field<double>(doc, "config.simulated", "fixed_confidence", sim.fixed_confidence);
    check_unit(sim.fixed_confidence, "config.simulated.fixed_confidence");
    return sim;
}

HttpSection parse_http(const Json& doc) {
    expect_keys(doc, "config.http", {"base_url", "model_before", "model_after", "api_key_env"});
    HttpSection http;
    http.base_url = need_field<std::string>(doc, "config.http", "base_url");
    http.model_before = need_field<std::string>(doc, "config.http", "model_before");
    http.model_after = need_field<std::string>(doc, "config.http", "model_after");
    http.api_key_env = get_field<std::string>(doc, "config.http", "api_key_env", http.api_key_env);
    if (http.base_url.empty() || http.model_before.empty() || http.model_after.empty()) {
        throw ConfigError("config.http base_url and model names must be nonempty");
    }
    return http;
}

}  // namespace

RunConfig RunConfig::from_json(const Json& doc, const fs::path& base_dir) {
    expect_keys(doc, "config",
                {"corpus", "backend", "n_samples", "temperature", "max_gap", "n_train", "n_test",
                 "n_pairs", "n_eval_pairs", "parallelism", "bins", "out_dir", "seeds", "bootstrap",
                 "simulated", "http"});
    RunConfig config;
    const auto corpus = need_field<std::string>(doc, "config", "corpus");
    config.corpus_path = fs::path(corpus).is_absolute() ? fs::path(corpus) : base_dir / corpus;
    if (!fs::exists(config.corpus_path)) {
        throw ConfigError("corpus path does not exist: " + config.corpus_path.string());
    }
    config.backend =
        backend_kind_from_string(get_field<std::string>(doc, "config", "backend", "simulated"));
    config.n_samples = get_field<int>(doc, "config", "n_samples", config.n_samples);
    if (config.n_samples < 1) throw ConfigError("n_samples must be >= 1");
    config.temperature = get_field<double>(doc, "config", "temperature", config.temperature);
    if (config.temperature < 0.0) throw ConfigError("temperature must be >= 0");
    config.max_gap = get_field<double>(doc, "config", "max_gap", config.max_gap);
    if (!(config.max_gap > 0.0 && config.max_gap < 1.0)) {
        throw ConfigError("max_gap must lie strictly between 0 and 1");
    }
    config.n_train = need_field<std::size_t>(doc, "config", "n_train");
    config.n_test = need_field<std::size_t>(doc, "config", "n_test");
    if (config.n_train < 1) throw ConfigError("n_train must be >= 1");
    config.n_pairs = need_field<int>(doc, "config", "n_pairs");
    config.n_eval_pairs = need_field<int>(doc, "config", "n_eval_pairs");
    if (config.n_pairs < 0 || config.n_eval_pairs < 0) {
        throw ConfigError("pair counts must be >= 0");
    }
    config.parallelism = get_field<int>(doc, "config", "parallelism", config.parallelism);
    if (config.parallelism < 1) throw ConfigError("parallelism must be >= 1");
    config.bins = get_field<std::size_t>(doc, "config", "bins", config.bins);
    if (config.bins < 2) throw ConfigError("bins must be >= 2");
    const auto out = need_field<std::string>(doc, "config", "out_dir");
    config.out_dir = fs::path(out).is_absolute() ? fs::path(out) : base_dir / out;
    if (!doc.contains("seeds")) throw ConfigError("config is missing required key 'seeds'");
    config.seeds = parse_seeds(doc.at("seeds"));
    if (doc.contains("bootstrap")) {
        expect_keys(doc.at("bootstrap"), "config.bootstrap", {"resamples", "alpha"});
        config.bootstrap.resamples = get_field<int>(doc.at("bootstrap"), "config.bootstrap",
                                                    "resamples", config.bootstrap.resamples);
        config.bootstrap.alpha =
            get_field<double>(doc.at("bootstrap"), "config.bootstrap", "alpha",
                              config.bootstrap.alpha);
    }
    if (config.bootstrap.resamples < 1) throw ConfigError("bootstrap.resamples must be >= 1");
    if (!(config.bootstrap.alpha > 0.0 && config.bootstrap.alpha < 1.0)) {
        throw ConfigError("bootstrap.alpha must lie strictly between 0 and 1");
    }
    if (doc.contains("simulated")) config.simulated = parse_simulated(doc.at("simulated"));
    if (doc.contains("http")) config.http = parse_http(doc.at("http"));
    if (config.backend == BackendKind::http && !config.http) {
        throw ConfigError("backend 'http' requires a config.http section");
    }
    return config;
}

RunConfig RunConfig::load(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("config file does not exist: " + path.string());
    return from_json(read_json_file(path), fs::absolute(path).parent_path());
}

Json RunConfig::to_json() const {
    Json seeds_doc{{"split", seeds.split},       {"backend", seeds.backend},
                   {"balance", seeds.balance},   {"targets", seeds.targets},
                   {"pairs", seeds.pairs},       {"multitask", seeds.multitask},
                   {"eval", seeds.eval},         {"bootstrap", seeds.bootstrap}};
    Json doc{{"corpus", corpus_path.string()},
             {"backend", to_string(backend)},
             {"n_samples", n_samples},
             {"temperature", temperature},
             {"max_gap", max_gap},
             {"n_train", n_train},
             {"n_test", n_test},
             {"n_pairs", n_pairs},
             {"n_eval_pairs", n_eval_pairs},
             {"bins", bins},
             {"seeds", std::move(seeds_doc)},
             {"bootstrap", Json{{"resamples", bootstrap.resamples}, {"alpha", bootstrap.alpha}}}};
    if (backend == BackendKind::simulated) {
        Json overrides = Json::object();
        for (const auto& [id, p] : simulated.p_overrides) overrides[id] = p;
        doc["simulated"] = Json{{"p_default", simulated.p_default},
                                {"p_choices", simulated.p_choices},
                                {"p_overrides", std::move(overrides)},
                                {"distractor_count", simulated.distractor_count},
                                {"fixed_confidence", simulated.fixed_confidence}};
    } else {
        doc["http"] = Json{{"base_url", http->base_url},
                           {"model_before", http->model_before},
                           {"model_after", http->model_after},
                           {"api_key_env", http->api_key_env}};
    }
    return doc;
}

std::string RunConfig::digest() const { return sha256_hex(to_jsonl_line(to_json())); }

namespace {

std::string now_iso8601() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ", tm.tm_year + 1900,
                  tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec);
    return buf;
}

fs::path manifest_path(const RunConfig& config) { return config.out_dir / "manifest.json"; }

void save_manifest(const RunConfig& config, Json& manifest) {
    manifest["updated_at"] = now_iso8601();
    write_json_file(manifest_path(config), manifest);
}

void require_stages(const Json& manifest, const RunConfig& config,
                    std::initializer_list<Stage> stages) {
    for (Stage stage : stages) {
        if (!manifest.at("stages").contains(to_string(stage))) {
            throw DependencyError(std::string("stage '") + to_string(stage) +
                                  "' artifacts are missing from " + config.out_dir.string() +
                                  "; run --stage " + to_string(stage) + " first");
        }
    }
}

// Collects stage outputs and their digests as they are written.
class StageOutputs {
public:
    explicit StageOutputs(fs::path dir) : dir_(std::move(dir)) {}

    fs::path path(const std::string& name) const { return dir_ / name; }

    void record(const std::string& name) { artifacts_[name] = sha256_file(dir_ / name); }

    void write_records(const std::string& name, const std::vector<Json>& lines) {
        write_jsonl(dir_ / name, lines);
        record(name);
    }

    void write_doc(const std::string& name, const Json& doc) {
        write_json_file(dir_ / name, doc);
        record(name);
    }

    void write_text(const std::string& name, const std::string& text) {
        std::ofstream out(dir_ / name, std::ios::binary);
        if (!out) throw DependencyError("cannot write artifact: " + (dir_ / name).string());
        out << text;
        out.close();
        record(name);
    }

    Json artifacts_json() const {
        Json doc = Json::object();
        for (const auto& [name, digest] : artifacts_) doc[name] = digest;
        return doc;
    }

private:
    fs::path dir_;
    std::map<std::string, std::string> artifacts_;
};

void commit_stage(const RunConfig& config, Json& manifest, Stage stage,
                  const StageOutputs& outputs, Json info) {
    manifest["stages"][to_string(stage)] =
        Json{{"artifacts", outputs.artifacts_json()}, {"info", std::move(info)}};
    save_manifest(config, manifest);
}

std::shared_ptr<Gateway> make_gateway(const RunConfig& config, std::shared_ptr<Backend> backend,
                                      const std::string& label) {
    fs::create_directories(config.out_dir / "cache");
    fs::create_directories(config.out_dir / "audit");
    GatewayOptions options;
    options.cache_path = config.out_dir / "cache" / (label + ".jsonl");
    options.audit_path = config.out_dir / "audit" / (label + ".jsonl");
    return std::make_shared<Gateway>(std::move(backend), std::move(options));
}

std::unordered_map<std::string, double> latent_p_map(const QuestionSet& corpus,
                                                     const SimulatedSection& sim) {
    std::unordered_map<std::string, double> p;
    for (std::size_t i = 0; i < corpus.questions.size(); ++i) {
        const Question& q = corpus.questions[i];
        double value = sim.p_choices.empty() ? sim.p_default
                                             : sim.p_choices[i % sim.p_choices.size()];
        const auto it = sim.p_overrides.find(q.id);
        if (it != sim.p_overrides.end()) value = it->second;
        p[q.id] = value;
    }
    return p;
}

std::shared_ptr<Gateway> candidate_gateway(const RunConfig& config,
                                           const std::shared_ptr<const QuestionSet>& corpus) {
    if (config.backend == BackendKind::simulated) {
        SimulatedModelProfile profile;
        profile.p_correct = latent_p_map(*corpus, config.simulated);
        profile.distractor_count = config.simulated.distractor_count;
        profile.verbalization = VerbalizationPolicy::fixed_overconfident;
        profile.fixed_confidence = config.simulated.fixed_confidence;
        return make_gateway(config,
                            std::make_shared<SimulatedBackend>(corpus, std::move(profile),
                                                               config.seeds.backend,
                                                               "simulated:candidate"),
                            "candidate");
    }
    HttpBackendConfig http;
    http.base_url = config.http->base_url;
    http.model = config.http->model_before;
    http.api_key_env = config.http->api_key_env;
    return make_gateway(config, std::make_shared<HttpBackend>(std::move(http)), "candidate");
}

std::vector<Json> exclusion_lines(const std::vector<Exclusion>& exclusions) {
    std::vector<Json> lines;
    lines.reserve(exclusions.size());
    for (const Exclusion& e : exclusions) {
        lines.push_back(Json{{"id", e.question_id}, {"reason", e.reason}});
    }
    return lines;
}

Json stage_sample(const RunConfig& config, Json manifest) {
    const auto corpus = std::make_shared<const QuestionSet>(load_corpus(config.corpus_path));
    const CorpusSplit split =
        split_corpus(*corpus, config.n_train, config.n_test, config.seeds.split);
    const auto gateway = candidate_gateway(config, corpus);
    RemoteJudgeOracle oracle(gateway);
    const ConsistencyBuild train =
        build_consistency_records(split.train, *gateway, config.n_samples, config.temperature,
                                  oracle, config.parallelism);
    const ConsistencyBuild test =
        build_consistency_records(split.test, *gateway, config.n_samples, config.temperature,
                                  oracle, config.parallelism);

    StageOutputs out(config.out_dir);
    out.write_doc("split.json", split_manifest(split));
    write_consistency_records(train.records, out.path("records_train.jsonl"));
    out.record("records_train.jsonl");
    write_consistency_records(test.records, out.path("records_test.jsonl"));
    out.record("records_test.jsonl");
    out.write_records("exclusions_train.jsonl", exclusion_lines(train.exclusions));
    out.write_records("exclusions_test.jsonl", exclusion_lines(test.exclusions));
    commit_stage(config, manifest, Stage::sample, out,
                 Json{{"train_records", train.records.size()},
                      {"test_records", test.records.size()},
                      {"train_excluded", train.exclusions.size()},
                      {"test_excluded", test.exclusions.size()},
                      {"completions_cached", gateway->cache_size()}});
    return manifest;
}

Json stage_targets(const RunConfig& config, Json manifest) {
    require_stages(manifest, config, {Stage::sample});
    const auto records = read_consistency_records(config.out_dir / "records_train.jsonl");
    const AccuracyCurve curve = empirical_accuracy_curve(records, "train");

    RngStream balance_rng(config.seeds.balance);
    const BalanceResult balanced = balance_by_consistency(records, config.max_gap, balance_rng);

    const RngStream target_rng(config.seeds.targets);
    std::vector<Json> target_lines;
    target_lines.reserve(balanced.records.size());
    for (const ConsistencyRecord& record : balanced.records) {
        target_lines.push_back(
            confidence_target_to_json(target_confidence(record, curve, target_rng)));
    }

    StageOutputs out(config.out_dir);
    out.write_doc("curve.json", curve.to_json());
    write_consistency_records(balanced.records, out.path("records_train_balanced.jsonl"));
    out.record("records_train_balanced.jsonl");
    out.write_records("targets_train.jsonl", target_lines);
    commit_stage(config, manifest, Stage::targets, out,
                 Json{{"records_in", records.size()},
                      {"records_balanced", balanced.records.size()},
                      {"single_level", balanced.single_level}});
    return manifest;
}

Json stage_build_sft(const RunConfig& config, Json manifest) {
    require_stages(manifest, config, {Stage::targets});
    const QuestionSet corpus = load_corpus(config.corpus_path);
    const auto records =
        read_consistency_records(config.out_dir / "records_train_balanced.jsonl");
    const AccuracyCurve curve =
        AccuracyCurve::from_json(read_json_file(config.out_dir / "curve.json"));
    const RngStream target_rng(config.seeds.targets);
    const auto instances = build_single_sft(records, curve, corpus, target_rng);

    StageOutputs out(config.out_dir);
    const Json file_manifest =
        export_finetune_file(instances, out.path("sft_single_train.jsonl"),
                             Json{{"task", "S"}, {"seed", config.seeds.targets}});
    out.record("sft_single_train.jsonl");
    out.write_doc("sft_single_train.manifest.json", file_manifest);
    commit_stage(config, manifest, Stage::build_sft, out,
                 Json{{"instances", instances.size()}});
    return manifest;
}

Json stage_build_pairs(const RunConfig& config, Json manifest) {
    require_stages(manifest, config, {Stage::sample, Stage::build_sft});
    if (config.n_pairs < 1) {
        throw ConfigError("n_pairs must be >= 1 for the build-pairs stage");
    }
    const QuestionSet corpus = load_corpus(config.corpus_path);
    const auto records = read_consistency_records(config.out_dir / "records_train.jsonl");
    RngStream pair_rng(config.seeds.pairs);
    const auto pairs = build_pair_sft(records, config.n_pairs, pair_rng);

    std::vector<Json> pair_lines;
    pair_lines.reserve(pairs.size());
    for (const ComparisonInstance& pair : pairs) {
        pair_lines.push_back(comparison_instance_to_json(pair));
    }

    auto c_set = build_comparison_sft(pairs, corpus);
    StageOutputs out(config.out_dir);
    out.write_records("pairs_train.jsonl", pair_lines);
    const Json c_manifest =
        export_finetune_file(c_set, out.path("sft_pairs_train.jsonl"),
                             Json{{"task", "C"}, {"seed", config.seeds.pairs}});
    out.record("sft_pairs_train.jsonl");
    out.write_doc("sft_pairs_train.manifest.json", c_manifest);

    auto s_set = read_finetune_file(config.out_dir / "sft_single_train.jsonl");
    const std::size_t s_count = s_set.size();
    const std::size_t c_count = c_set.size();
    RngStream merge_rng(config.seeds.multitask);
    const auto mixed = merge_multitask(std::move(s_set), std::move(c_set), merge_rng);
    const Json m_manifest =
        export_finetune_file(mixed, out.path("sft_multitask_train.jsonl"),
                             Json{{"task", "C+S"}, {"seed", config.seeds.multitask}});
    out.record("sft_multitask_train.jsonl");
    out.write_doc("sft_multitask_train.manifest.json", m_manifest);
    commit_stage(config, manifest, Stage::build_pairs, out,
                 Json{{"pairs", pairs.size()},
                      {"single_instances", s_count},
                      {"comparison_instances", c_count}});
    return manifest;
}

struct EvalGateways {
    std::shared_ptr<Gateway> before;
    std::shared_ptr<Gateway> after;
    std::shared_ptr<Gateway> compare;
};

EvalGateways eval_gateways(const RunConfig& config,
                           const std::shared_ptr<const QuestionSet>& corpus,
                           const std::vector<ConsistencyRecord>& test_records,
                           const AccuracyCurve& curve) {
    EvalGateways gateways;
    if (config.backend == BackendKind::simulated) {
        // The evaluated model replays its sampled behavior: it answers its
        // modal answer (right or wrong, deterministically), so correctness
        // matches the held-out records and only the verbalization differs
        // between conditions.
        std::unordered_map<std::string, double> replay;
        std::unordered_map<std::string, double> curve_readout;
        std::unordered_map<std::string, double> latent;
        for (const ConsistencyRecord& record : test_records) {
            replay[record.question_id] = record.correct ? 1.0 : 0.0;
            curve_readout[record.question_id] = curve.accuracy_at(record.s);
            latent[record.question_id] = record.s;
        }
        SimulatedModelProfile before;
        before.p_correct = replay;
        before.distractor_count = config.simulated.distractor_count;
        before.verbalization = VerbalizationPolicy::fixed_overconfident;
        before.fixed_confidence = config.simulated.fixed_confidence;
        SimulatedModelProfile after;
        after.p_correct = replay;
        after.distractor_count = config.simulated.distractor_count;
        after.verbalization = VerbalizationPolicy::oracle_readout;
        after.readout = std::move(curve_readout);
        SimulatedModelProfile compare;
        compare.p_correct = std::move(replay);
        compare.distractor_count = config.simulated.distractor_count;
        compare.verbalization = VerbalizationPolicy::oracle_readout;
        compare.readout = std::move(latent);
        compare.comparison = ComparisonPolicy::pick_higher_latent;
        gateways.before = make_gateway(
            config,
            std::make_shared<SimulatedBackend>(corpus, std::move(before), config.seeds.eval,
                                               "simulated:before"),
            "eval_before");
        gateways.after = make_gateway(
            config,
            std::make_shared<SimulatedBackend>(corpus, std::move(after), config.seeds.eval,
                                               "simulated:after"),
            "eval_after");
        gateways.compare = make_gateway(
            config,
            std::make_shared<SimulatedBackend>(corpus, std::move(compare), config.seeds.eval,
                                               "simulated:compare"),
            "eval_compare");
        return gateways;
    }
    HttpBackendConfig before;
    before.base_url = config.http->base_url;
    before.model = config.http->model_before;
    before.api_key_env = config.http->api_key_env;
    HttpBackendConfig after = before;
    after.model = config.http->model_after;
    gateways.before =
        make_gateway(config, std::make_shared<HttpBackend>(std::move(before)), "eval_before");
    gateways.after =
        make_gateway(config, std::make_shared<HttpBackend>(std::move(after)), "eval_after");
    gateways.compare = gateways.after;
    return gateways;
}

ConfidenceReport ask_single(Gateway& gateway, const Question& question,
                            EquivalenceOracle& oracle) {
    CompletionRequest request;
    request.prompt = render_single_prompt(question);
    request.temperature = 0.0;
    request.sample_index = 0;
    request.schema_id = SchemaId::single_question;
    const ParsedResponse response = gateway.complete(request);
    const AnswerSample sample =
        make_answer_sample(question.id, 0, response.answers.at(0), question.answer_format);
    ConfidenceReport report;
    report.question_id = question.id;
    report.confidence = response.confidence.value();
    report.correct = grade_answer(sample.canonical, question, oracle);
    report.answer = sample.canonical;
    return report;
}

Json stage_eval(const RunConfig& config, Json manifest) {
    require_stages(manifest, config, {Stage::sample, Stage::targets});
    const auto corpus = std::make_shared<const QuestionSet>(load_corpus(config.corpus_path));
    const auto test_records = read_consistency_records(config.out_dir / "records_test.jsonl");
    if (test_records.empty()) {
        throw ConfigError("no held-out records to evaluate; n_test was 0 or every test question "
                          "was excluded");
    }
    const AccuracyCurve curve =
        AccuracyCurve::from_json(read_json_file(config.out_dir / "curve.json"));
    const EvalGateways gateways = eval_gateways(config, corpus, test_records, curve);
    RemoteJudgeOracle oracle(gateways.after);

    struct SingleSlot {
        std::optional<ConfidenceReport> before;
        std::optional<ConfidenceReport> after;
        std::optional<Exclusion> excluded;
    };
    std::vector<SingleSlot> slots(test_records.size());
    parallel_for(test_records.size(), config.parallelism, [&](std::size_t i) {
        const ConsistencyRecord& record = test_records[i];
        const Question& question = corpus->require(record.question_id);
        try {
            slots[i].before = ask_single(*gateways.before, question, oracle);
            slots[i].after = ask_single(*gateways.after, question, oracle);
        } catch (const BackendError& e) {
            slots[i].before.reset();
            slots[i].after.reset();
            slots[i].excluded = Exclusion{record.question_id, e.what()};
        }
    });

    std::vector<ConfidenceReport> before_reports;
    std::vector<ConfidenceReport> after_reports;
    std::vector<Exclusion> exclusions;
    for (const SingleSlot& slot : slots) {
        if (slot.excluded) {
            exclusions.push_back(*slot.excluded);
            continue;
        }
        before_reports.push_back(*slot.before);
        after_reports.push_back(*slot.after);
    }
    if (before_reports.empty()) {
        throw ConfigError("every held-out question was excluded during eval");
    }

    std::vector<ComparisonOutcome> outcomes;
    if (config.n_eval_pairs > 0) {
        RngStream eval_rng(config.seeds.eval);
        const auto eval_pairs = build_pair_sft(test_records, config.n_eval_pairs, eval_rng);
        std::vector<std::optional<ComparisonOutcome>> pair_slots(eval_pairs.size());
        std::vector<std::optional<Exclusion>> pair_excluded(eval_pairs.size());
        parallel_for(eval_pairs.size(), config.parallelism, [&](std::size_t i) {
            const ComparisonInstance& pair = eval_pairs[i];
            const Question& q1 = corpus->require(pair.q1_id);
            const Question& q2 = corpus->require(pair.q2_id);
            try {
                CompletionRequest request;
                request.prompt = render_comparison_prompt(q1, q2);
                request.temperature = 0.0;
                request.sample_index = 0;
                request.schema_id = SchemaId::comparison;
                const ParsedResponse response = gateways.compare->complete(request);
                ComparisonOutcome outcome;
                outcome.q1_id = pair.q1_id;
                outcome.q2_id = pair.q2_id;
                outcome.s1 = pair.s1;
                outcome.s2 = pair.s2;
                outcome.model_choice = response.choice.value();
                outcome.correct_q1 = grade_answer(
                    make_answer_sample(q1.id, 0, response.answers.at(0), q1.answer_format)
                        .canonical,
                    q1, oracle);
                outcome.correct_q2 = grade_answer(
                    make_answer_sample(q2.id, 0, response.answers.at(1), q2.answer_format)
                        .canonical,
                    q2, oracle);
                pair_slots[i] = outcome;
            } catch (const BackendError& e) {
                pair_excluded[i] = Exclusion{pair.q1_id + "+" + pair.q2_id, e.what()};
            }
        });
        for (std::size_t i = 0; i < pair_slots.size(); ++i) {
            if (pair_slots[i]) outcomes.push_back(*pair_slots[i]);
            if (pair_excluded[i]) exclusions.push_back(*pair_excluded[i]);
        }
    }

    std::vector<Json> before_lines;
    std::vector<Json> after_lines;
    for (const ConfidenceReport& r : before_reports) {
        before_lines.push_back(confidence_report_to_json(r));
    }
    for (const ConfidenceReport& r : after_reports) {
        after_lines.push_back(confidence_report_to_json(r));
    }
    std::vector<Json> outcome_lines;
    outcome_lines.reserve(outcomes.size());
    for (const ComparisonOutcome& o : outcomes) {
        outcome_lines.push_back(comparison_outcome_to_json(o));
    }

    StageOutputs out(config.out_dir);
    out.write_records("reports_before.jsonl", before_lines);
    out.write_records("reports_after.jsonl", after_lines);
    out.write_records("outcomes_after.jsonl", outcome_lines);
    out.write_records("exclusions_eval.jsonl", exclusion_lines(exclusions));
    out.write_doc("metrics_before.json", metrics_report_json(before_reports, config.bins));
    out.write_doc("metrics_after.json",
                  metrics_report_json(after_reports, outcomes, config.bins));
    commit_stage(config, manifest, Stage::eval, out,
                 Json{{"evaluated", before_reports.size()},
                      {"pairs_evaluated", outcomes.size()},
                      {"excluded", exclusions.size()}});
    return manifest;
}

Json stage_bootstrap(const RunConfig& config, Json manifest) {
    require_stages(manifest, config, {Stage::eval});
    std::vector<ConfidenceReport> before;
    for (const Json& line : read_jsonl(config.out_dir / "reports_before.jsonl")) {
        before.push_back(confidence_report_from_json(line));
    }
    std::unordered_map<std::string, ConfidenceReport> after_by_id;
    for (const Json& line : read_jsonl(config.out_dir / "reports_after.jsonl")) {
        ConfidenceReport report = confidence_report_from_json(line);
        after_by_id[report.question_id] = std::move(report);
    }
    std::vector<PairedSample<ConfidenceReport>> samples;
    samples.reserve(before.size());
    for (ConfidenceReport& report : before) {
        const auto it = after_by_id.find(report.question_id);
        if (it == after_by_id.end()) {
            throw DependencyError("eval reports are not paired: question '" + report.question_id +
                                  "' is missing from reports_after.jsonl");
        }
        samples.push_back(
            PairedSample<ConfidenceReport>{report.question_id, std::move(report), it->second});
    }

    const std::size_t bins = config.bins;
    const MetricSelector<ConfidenceReport> ece_metric =
        [bins](const std::vector<ConfidenceReport>& reports) { return ece(reports, bins); };
    const MetricSelector<ConfidenceReport> auc_metric =
        [](const std::vector<ConfidenceReport>& reports) { return auc(reports); };

    const RngStream root(config.seeds.bootstrap);
    const auto ece_result =
        paired_bootstrap(samples, "ece", ece_metric, config.bootstrap.resamples,
                         config.bootstrap.alpha, root.fork("ece").next_u64());
    const auto auc_result =
        paired_bootstrap(samples, "auc", auc_metric, config.bootstrap.resamples,
                         config.bootstrap.alpha, root.fork("auc").next_u64());

    StageOutputs out(config.out_dir);
    out.write_doc("bootstrap.json", Json::array({bootstrap_result_to_json(ece_result),
                                                 bootstrap_result_to_json(auc_result)}));
    commit_stage(config, manifest, Stage::bootstrap, out,
                 Json{{"units", samples.size()},
                      {"resamples", config.bootstrap.resamples}});
    return manifest;
}

std::string fixed4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

std::string cell(const Json& value) {
    return value.is_null() ? std::string("-") : fixed4(value.get<double>());
}

std::string render_report_table(const RunConfig& config, const Json& metrics_before,
                                const Json& metrics_after, const Json& bootstrap_doc) {
    std::ostringstream text;
    text << "run " << config.digest().substr(0, 12) << " (" << to_string(config.backend)
         << " backend)\n";
    text << "questions evaluated: " << metrics_before.at("n").get<std::size_t>()
         << ", comparison pairs: "
         << (metrics_after.at("auc_c").is_null() ? 0 : config.n_eval_pairs) << "\n\n";

    const char* const columns[] = {"accuracy", "ece", "auc", "auc_c", "auc_a"};
    text << std::left << std::setw(11) << "condition" << std::setw(8) << "n";
    for (const char* column : columns) text << std::setw(10) << column;
    text << "\n";
    const auto row = [&](const char* name, const Json& doc) {
        text << std::left << std::setw(11) << name << std::setw(8)
             << doc.at("n").get<std::size_t>();
        for (const char* column : columns) text << std::setw(10) << cell(doc.at(column));
        text << "\n";
    };
    row("before", metrics_before);
    row("after", metrics_after);

    text << "\npaired bootstrap: " << config.bootstrap.resamples << " resamples, alpha "
         << fixed4(config.bootstrap.alpha) << " (* = CI excludes zero)\n";
    text << std::left << std::setw(9) << "metric" << std::setw(11) << "before" << std::setw(11)
         << "after" << std::setw(13) << "delta" << "95% CI\n";
    for (const Json& entry : bootstrap_doc) {
        const bool significant = entry.at("significant").get<bool>();
        const std::string delta =
            fixed4(entry.at("delta").get<double>()) + (significant ? " *" : "");
        text << std::left << std::setw(9) << entry.at("metric").get<std::string>()
             << std::setw(11) << fixed4(entry.at("before").get<double>()) << std::setw(11)
             << fixed4(entry.at("after").get<double>()) << std::setw(13) << delta << "["
             << fixed4(entry.at("ci").at(0).get<double>()) << ", "
             << fixed4(entry.at("ci").at(1).get<double>()) << "]\n";
    }
    return text.str();
}

Json stage_report(const RunConfig& config, Json manifest) {
    require_stages(manifest, config, {Stage::eval, Stage::bootstrap});
    verify_artifacts(manifest, config.out_dir);

    const Json metrics_before = read_json_file(config.out_dir / "metrics_before.json");
    const Json metrics_after = read_json_file(config.out_dir / "metrics_after.json");
    const Json bootstrap_doc = read_json_file(config.out_dir / "bootstrap.json");

    const auto diagram_csv = [&](const char* file) {
        std::vector<ConfidenceReport> reports;
        for (const Json& line : read_jsonl(config.out_dir / file)) {
            reports.push_back(confidence_report_from_json(line));
        }
        return reliability_csv(reliability_diagram(reports, config.bins));
    };

    StageOutputs out(config.out_dir);
    out.write_text("report.txt",
                   render_report_table(config, metrics_before, metrics_after, bootstrap_doc));
    out.write_text("reliability_before.csv", diagram_csv("reports_before.jsonl"));
    out.write_text("reliability_after.csv", diagram_csv("reports_after.jsonl"));
    commit_stage(config, manifest, Stage::report, out, Json::object());
    return manifest;
}

}  // namespace

Json load_or_init_manifest(const RunConfig& config) {
    fs::create_directories(config.out_dir);
    const fs::path path = manifest_path(config);
    const std::string digest = config.digest();
    if (fs::exists(path)) {
        Json manifest = read_json_file(path);
        if (!manifest.contains("config_sha256") || !manifest.contains("stages")) {
            throw ConfigError("manifest at " + path.string() + " is not a metacal run manifest");
        }
        if (manifest.at("config_sha256").get<std::string>() != digest) {
            throw ConfigError("run directory " + config.out_dir.string() +
                              " holds artifacts from a different config (manifest " +
                              manifest.at("config_sha256").get<std::string>().substr(0, 12) +
                              ", current " + digest.substr(0, 12) +
                              "); use a fresh --out or the original config");
        }
        return manifest;
    }
    const std::string now = now_iso8601();
    return Json{{"tool", "metacal"},      {"version", METACAL_VERSION},
                {"config_sha256", digest}, {"config", config.to_json()},
                {"created_at", now},       {"updated_at", now},
                {"stages", Json::object()}};
}

void verify_artifacts(const Json& manifest, const fs::path& out_dir) {
    for (const auto& stage_entry : manifest.at("stages").items()) {
        for (const auto& artifact : stage_entry.value().at("artifacts").items()) {
            const fs::path path = out_dir / artifact.key();
            if (!fs::exists(path)) {
                throw DependencyError("artifact " + artifact.key() + " from stage '" +
                                      stage_entry.key() + "' is missing from " +
                                      out_dir.string());
            }
            const std::string digest = sha256_file(path);
            if (digest != artifact.value().get<std::string>()) {
                throw DependencyError("artifact " + artifact.key() + " from stage '" +
                                      stage_entry.key() +
                                      "' does not match its manifest digest; the run directory "
                                      "mixes artifacts from different runs");
            }
        }
    }
}

Json run_stage(const RunConfig& config, Stage stage) {
    Json manifest = load_or_init_manifest(config);
    switch (stage) {
        case Stage::sample: return stage_sample(config, std::move(manifest));
        case Stage::targets: return stage_targets(config, std::move(manifest));
        case Stage::build_sft: return stage_build_sft(config, std::move(manifest));
        case Stage::build_pairs: return stage_build_pairs(config, std::move(manifest));
        case Stage::eval: return stage_eval(config, std::move(manifest));
        case Stage::bootstrap: return stage_bootstrap(config, std::move(manifest));
        case Stage::report: return stage_report(config, std::move(manifest));
    }
    throw ConfigError("unreachable stage value");
}

}  // namespace metacal
