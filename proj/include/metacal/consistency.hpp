#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <tuple>
#include <vector>

#include "metacal/corpus.hpp"
#include "metacal/gateway.hpp"
#include "metacal/jsonl.hpp"

namespace metacal {

struct AnswerSample {
    std::string question_id;
    int sample_index = 0;
    std::string canonical;
    std::string raw;
};

struct AnswerCluster {
    std::string representative;
    std::vector<int> members;  // sample indices in join order
};

struct ConsistencyRecord {
    std::string question_id;
    std::string modal_answer;
    double s = 0.0;  // largest cluster size / n_samples
    int n_samples = 0;
    bool correct = false;
    std::vector<int> cluster_sizes;
    std::vector<AnswerSample> samples;
};

Json consistency_record_to_json(const ConsistencyRecord& record);
ConsistencyRecord consistency_record_from_json(const Json& doc);

// Canonical form per answer format: multiple choice reduces to one uppercase
// letter, numeric to a minimal integer literal, short answers to folded,
// trimmed, whitespace-collapsed text. Throws NormalizationError when no
// canonical form is extractable.
std::string normalize_answer(const std::string& raw, AnswerFormat format);

// Unparseable samples become singleton clusters under a per-index sentinel
// instead of being dropped: they are evidence of inconsistency, and dropping
// them would inflate the consistency score.
std::string unparsed_sentinel(int sample_index);
bool is_unparsed_sentinel(const std::string& canonical);

// Normalizes raw into an AnswerSample, falling back to the sentinel.
AnswerSample make_answer_sample(const std::string& question_id, int sample_index,
                                const std::string& raw, AnswerFormat format);

class EquivalenceOracle {
public:
    virtual ~EquivalenceOracle() = default;
    // Whether two canonical answers mean the same thing for this question.
    virtual bool equivalent(const Question& question, const std::string& a,
                            const std::string& b) = 0;
    virtual const char* kind() const = 0;
};

class NormalizedExactOracle : public EquivalenceOracle {
public:
    bool equivalent(const Question&, const std::string& a, const std::string& b) override {
        return a == b;
    }
    const char* kind() const override { return "normalized_exact"; }
};

// Asks a judge backend whether two answers are semantically equivalent.
// Unordered pairs are queried once per question and cached, which also
// enforces symmetry; reflexivity is short-circuited locally.
class RemoteJudgeOracle : public EquivalenceOracle {
public:
    explicit RemoteJudgeOracle(std::shared_ptr<Gateway> gateway, double temperature = 0.0);

    bool equivalent(const Question& question, const std::string& a,
                    const std::string& b) override;
    const char* kind() const override { return "remote_judge"; }

private:
    std::shared_ptr<Gateway> gateway_;
    double temperature_;
    std::mutex mutex_;
    std::map<std::tuple<std::string, std::string, std::string>, bool> verdicts_;
};

// Greedy single-pass clustering in sample_index order: each sample joins the
// first cluster whose representative the oracle accepts, else founds a new
// one. Sentinel samples always found singletons and are never sent to the
// oracle. Oracle transport failures are rethrown naming the pending pair.
std::vector<AnswerCluster> cluster_answers(const std::vector<AnswerSample>& samples,
                                           const Question& question,
                                           EquivalenceOracle& oracle);

// Modal representative and consistency score from a cluster partition. Size
// ties break to the lexicographically smallest representative.
std::pair<std::string, double> consistency_score(const std::vector<AnswerCluster>& clusters,
                                                 int n_samples);

// Exact canonical match against gold for multiple choice and numeric;
// oracle verdict in question context for short answers. Sentinels are never
// correct. Oracle failures propagate, never silently grade incorrect.
bool grade_answer(const std::string& canonical, const Question& question,
                  EquivalenceOracle& oracle);

struct Exclusion {
    std::string question_id;
    std::string reason;
};

struct ConsistencyBuild {
    std::vector<ConsistencyRecord> records;     // corpus order
    std::vector<Exclusion> exclusions;          // corpus order
};

// Samples every question n_samples times at the given temperature, clusters,
// scores, and grades the modal answer. Unrecoverable per-question failures
// (transport, schema, backend) land in the exclusions list and the run
// continues. Results are ordered by corpus position whatever the schedule.
ConsistencyBuild build_consistency_records(const QuestionSet& set, Gateway& gateway,
                                           int n_samples, double temperature,
                                           EquivalenceOracle& oracle, int parallelism = 1);

void write_consistency_records(const std::vector<ConsistencyRecord>& records,
                               const std::filesystem::path& path);
std::vector<ConsistencyRecord> read_consistency_records(const std::filesystem::path& path);
void write_exclusions(const std::vector<Exclusion>& exclusions,
                      const std::filesystem::path& path);

}  // namespace metacal
