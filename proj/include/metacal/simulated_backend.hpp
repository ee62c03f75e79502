#pragma once

#include <cstdint>
#include <memory>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>

#include "metacal/corpus.hpp"
#include "metacal/gateway.hpp"
#include "metacal/rng.hpp"

namespace metacal {

enum class VerbalizationPolicy { fixed_overconfident, oracle_readout, noisy_readout };
enum class ComparisonPolicy { pick_higher_latent, pick_random, pick_higher_latent_with_flip };

// Failure injection for exercising the exclusion path: transport throws on
// every attempt, malformed returns an unparseable payload on every attempt.
enum class SimulatedFailure { transport, malformed };

// Deterministic stand-in for a remote model. Answers are gold with the
// question's latent probability, otherwise a synthetic distractor; the
// verbalized confidence and the pairwise choice follow the configured
// policies. Everything derives from (seed, question id, sample_index), so
// results are independent of call order and thread schedule.
struct SimulatedModelProfile {
    std::unordered_map<std::string, double> p_correct;
    // Optional per-question verbalization/comparison latent; falls back to
    // p_correct when absent. Lets tests feed externally computed targets
    // (e.g. calibrated confidences) through the same machinery.
    std::unordered_map<std::string, double> readout;
    int distractor_count = 1;
    VerbalizationPolicy verbalization = VerbalizationPolicy::fixed_overconfident;
    double fixed_confidence = 0.9;
    double readout_noise = 0.0;
    ComparisonPolicy comparison = ComparisonPolicy::pick_higher_latent;
    double flip_rate = 0.0;
    // Canonical answer pairs the equivalence judge accepts beyond equality;
    // stored unordered (insert both orientations or use add_equivalence).
    std::set<std::pair<std::string, std::string>> equivalences;
    std::unordered_map<std::string, SimulatedFailure> failures;

    void add_equivalence(const std::string& a, const std::string& b);
    bool judged_equivalent(const std::string& a, const std::string& b) const;

    double p_of(const std::string& question_id) const;
    double latent_of(const std::string& question_id) const;
    void validate() const;
};

// One stochastic answer draw for a question; consumes from the caller's
// stream. Confidence follows the profile's verbalization policy.
ParsedResponse simulate_answer(const Question& question, const SimulatedModelProfile& profile,
                               RngStream& rng);

class SimulatedBackend : public Backend {
public:
    SimulatedBackend(std::shared_ptr<const QuestionSet> corpus, SimulatedModelProfile profile,
                     std::uint64_t seed, std::string id = "simulated");

    const std::string& id() const override { return id_; }
    std::string complete_raw(const CompletionRequest& request) override;

    const SimulatedModelProfile& profile() const { return profile_; }

private:
    RngStream stream_for(const std::string& label, int sample_index) const;

    std::shared_ptr<const QuestionSet> corpus_;
    std::unordered_map<std::string, const Question*> by_id_;
    SimulatedModelProfile profile_;
    std::uint64_t seed_;
    std::string id_;
};

}  // namespace metacal
