#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "metacal/consistency.hpp"
#include "metacal/corpus.hpp"
#include "metacal/jsonl.hpp"
#include "metacal/metrics.hpp"
#include "metacal/rng.hpp"

namespace metacal {

// Empirical accuracy per consistency level s in {1/N, ..., 1}. Queries for an
// unpopulated level resolve to the nearest populated one, ties toward lower s.
class AccuracyCurve {
public:
    AccuracyCurve(int n_levels, std::string source);

    int n_levels() const { return n_levels_; }
    const std::string& source() const { return source_; }

    // Maps s on the 1/N grid to a zero-based level index; off-grid s is a
    // setup bug.
    int level_index(double s) const;
    double level_value(int index) const;

    void set_level(int index, int count, double accuracy);
    int count_at(double s) const;
    bool populated(double s) const;
    // Accuracy with nearest-populated fallback. Requires >= 1 populated level.
    double accuracy_at(double s) const;
    int total_count() const;

    Json to_json() const;
    static AccuracyCurve from_json(const Json& doc);

private:
    int n_levels_;
    std::string source_;
    std::vector<int> counts_;
    std::vector<double> accuracy_;
};

AccuracyCurve empirical_accuracy_curve(const std::vector<ConsistencyRecord>& records,
                                       std::string source = "");

struct ConfidenceTarget {
    std::string question_id;
    double s = 0.0;
    double a_of_s = 0.0;
    double epsilon = 0.0;  // in [-0.05, 0.05]
    double target = 0.0;   // clamp(a_of_s + epsilon, 0, 1)
};

// Noise is drawn from a fork keyed by question id, so the target for a given
// (seed, question) is identical wherever it is recomputed.
ConfidenceTarget target_confidence(const ConsistencyRecord& record, const AccuracyCurve& curve,
                                   const RngStream& rng);

Json confidence_target_to_json(const ConfidenceTarget& target);
ConfidenceTarget confidence_target_from_json(const Json& doc);

struct BalanceResult {
    std::vector<ConsistencyRecord> records;  // original order preserved
    bool single_level = false;               // gap undefined, input unchanged
};

// Randomly downsamples the most populated consistency level until
// (count_top - count_second) / count_top <= max_gap. No other level changes.
BalanceResult balance_by_consistency(const std::vector<ConsistencyRecord>& records,
                                     double max_gap, RngStream& rng);

enum class TaskTag { S, C };
const char* to_string(TaskTag tag);
TaskTag task_tag_from_string(const std::string& name);

struct SftInstance {
    std::string prompt_text;
    std::optional<std::string> system_text;
    std::string target_text;
    TaskTag task_tag = TaskTag::S;
    std::vector<std::string> question_ids;
};

bool operator==(const SftInstance& a, const SftInstance& b);

// "The answer is {x} and my confidence score is {c:.2f}" and its inverse.
std::string format_single_target(const std::string& modal_answer, double target);
std::pair<std::string, double> parse_single_target(const std::string& text);

std::string format_comparison_target(PairChoice label);  // "The answer is {Q1|Q2}"

// One S instance per record, in record order. Records are assumed already
// balanced; targets come from target_confidence under the same stream.
std::vector<SftInstance> build_single_sft(const std::vector<ConsistencyRecord>& records,
                                          const AccuracyCurve& curve, const QuestionSet& set,
                                          const RngStream& rng);

struct ComparisonInstance {
    std::string q1_id;
    std::string q2_id;
    double s1 = 0.0;
    double s2 = 0.0;
    PairChoice label = PairChoice::Q1;  // position holding the higher s
};

Json comparison_instance_to_json(const ComparisonInstance& instance);
ComparisonInstance comparison_instance_from_json(const Json& doc);

// n_pairs distinct unordered pairs with unequal s, sampled uniformly, each
// oriented so that Q1/Q2 labels split exactly ceil/floor(n/2).
std::vector<ComparisonInstance> build_pair_sft(const std::vector<ConsistencyRecord>& records,
                                               int n_pairs, RngStream& rng);

// Renders comparison prompts and "The answer is {y}" targets for pairs.
std::vector<SftInstance> build_comparison_sft(const std::vector<ComparisonInstance>& pairs,
                                              const QuestionSet& set);

// Shuffled concatenation; tags and counts preserved.
std::vector<SftInstance> merge_multitask(std::vector<SftInstance> s_set,
                                         std::vector<SftInstance> c_set, RngStream& rng);

// Chat-format JSONL, one {"messages": [...], "meta": {...}} per instance.
// Returns a manifest with per-tag counts, the file digest, and advisory
// provider hyperparameters (never executed here); extra fields are merged in.
Json export_finetune_file(const std::vector<SftInstance>& instances,
                          const std::filesystem::path& path, Json extra = Json::object());
std::vector<SftInstance> read_finetune_file(const std::filesystem::path& path);

}  // namespace metacal
