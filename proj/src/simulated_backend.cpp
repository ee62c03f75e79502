#include "metacal/simulated_backend.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "metacal/errors.hpp"

namespace metacal {

namespace {

std::string distractor_for(const Question& question, const SimulatedModelProfile& profile,
                           std::uint64_t pick) {
    switch (question.answer_format) {
        case AnswerFormat::multiple_choice: {
            // Wrong answers must still be option letters or they would fail
            // normalization downstream; cycle over the non-gold letters.
            std::vector<std::string> wrong;
            for (const Option& opt : question.options) {
                if (opt.letter != question.gold) wrong.push_back(opt.letter);
            }
            return wrong[pick % wrong.size()];
        }
        case AnswerFormat::numeric: {
            long long gold = 0;
            try {
                gold = std::stoll(question.gold);
            } catch (const std::exception&) {
                throw ConfigError("numeric gold '" + question.gold + "' out of range for id '" +
                                  question.id + "'");
            }
            return std::to_string(gold + 1 + static_cast<long long>(pick));
        }
        case AnswerFormat::short_answer:
            return "wrong-" + std::to_string(pick + 1);
    }
    throw ConfigError("unknown answer format value");
}

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

// Pulls the payload of a "<prefix>..." line out of the judge prompt.
std::string extract_line(const std::string& text, const std::string& prefix,
                         const std::string& what) {
    std::size_t pos = text.find(prefix);
    if (pos != 0) {
        pos = text.find("\n" + prefix);
        if (pos == std::string::npos) {
            throw BackendError("judge prompt missing " + what + " line");
        }
        pos += 1;
    }
    const std::size_t start = pos + prefix.size();
    const std::size_t end = text.find('\n', start);
    return text.substr(start, end == std::string::npos ? std::string::npos : end - start);
}

}  // namespace

void SimulatedModelProfile::add_equivalence(const std::string& a, const std::string& b) {
    equivalences.insert({a, b});
    equivalences.insert({b, a});
}

bool SimulatedModelProfile::judged_equivalent(const std::string& a, const std::string& b) const {
    return a == b || equivalences.contains({a, b}) || equivalences.contains({b, a});
}

double SimulatedModelProfile::p_of(const std::string& question_id) const {
    const auto it = p_correct.find(question_id);
    if (it == p_correct.end()) {
        throw ConfigError("simulated profile has no p_correct for question id '" + question_id +
                          "'");
    }
    return it->second;
}

double SimulatedModelProfile::latent_of(const std::string& question_id) const {
    const auto it = readout.find(question_id);
    return it != readout.end() ? it->second : p_of(question_id);
}

void SimulatedModelProfile::validate() const {
    for (const auto& [id, p] : p_correct) {
        if (!(p >= 0.0 && p <= 1.0)) {
            throw ConfigError("p_correct for '" + id + "' outside [0,1]");
        }
    }
    for (const auto& [id, r] : readout) {
        if (!(r >= 0.0 && r <= 1.0)) {
            throw ConfigError("readout for '" + id + "' outside [0,1]");
        }
    }
    if (distractor_count < 1) throw ConfigError("distractor_count must be >= 1");
    if (!(fixed_confidence >= 0.0 && fixed_confidence <= 1.0)) {
        throw ConfigError("fixed_confidence outside [0,1]");
    }
    if (readout_noise < 0.0) throw ConfigError("readout_noise must be >= 0");
    if (!(flip_rate >= 0.0 && flip_rate <= 0.5)) {
        throw ConfigError("flip_rate outside [0,0.5]");
    }
}

ParsedResponse simulate_answer(const Question& question, const SimulatedModelProfile& profile,
                               RngStream& rng) {
    const double p = profile.p_of(question.id);
    const bool correct = rng.bernoulli(p);
    std::string answer = question.gold;
    if (!correct) {
        answer = distractor_for(question, profile,
                                rng.below(static_cast<std::uint64_t>(profile.distractor_count)));
    }
    double confidence = profile.fixed_confidence;
    switch (profile.verbalization) {
        case VerbalizationPolicy::fixed_overconfident:
            break;
        case VerbalizationPolicy::oracle_readout:
            confidence = profile.latent_of(question.id);
            break;
        case VerbalizationPolicy::noisy_readout:
            confidence =
                clamp01(profile.latent_of(question.id) + rng.normal() * profile.readout_noise);
            break;
    }
    ParsedResponse response;
    response.answers = {answer};
    response.confidence = confidence;
    response.raw_text = Json{{"answer", answer}, {"confidence", confidence}}.dump();
    return response;
}

SimulatedBackend::SimulatedBackend(std::shared_ptr<const QuestionSet> corpus,
                                   SimulatedModelProfile profile, std::uint64_t seed,
                                   std::string id)
    : corpus_(std::move(corpus)), profile_(std::move(profile)), seed_(seed),
      id_(std::move(id)) {
    if (!corpus_) throw ConfigError("simulated backend needs a corpus");
    profile_.validate();
    for (const Question& q : corpus_->questions) by_id_[q.id] = &q;
}

RngStream SimulatedBackend::stream_for(const std::string& label, int sample_index) const {
    return RngStream(seed_).fork(label).fork(static_cast<std::uint64_t>(sample_index));
}

std::string SimulatedBackend::complete_raw(const CompletionRequest& request) {
    const PromptInstance& prompt = request.prompt;
    for (const std::string& qid : prompt.question_ids) {
        const auto failure = profile_.failures.find(qid);
        if (failure != profile_.failures.end()) {
            if (failure->second == SimulatedFailure::transport) {
                throw TransportError("injected transport failure for question '" + qid + "'");
            }
            return "this payload is deliberately not json";
        }
    }
    auto question_of = [&](const std::string& qid) -> const Question& {
        const auto it = by_id_.find(qid);
        if (it == by_id_.end()) {
            throw ConfigError("simulated backend corpus has no question id '" + qid + "'");
        }
        return *it->second;
    };

    switch (prompt.task) {
        case TaskKind::single_question: {
            if (prompt.question_ids.size() != 1) {
                throw ConfigError("single_question prompt must carry exactly 1 question id");
            }
            const Question& q = question_of(prompt.question_ids[0]);
            RngStream rng = stream_for("answer\x1f" + q.id, request.sample_index);
            return simulate_answer(q, profile_, rng).raw_text;
        }
        case TaskKind::comparison: {
            if (prompt.question_ids.size() != 2) {
                throw ConfigError("comparison prompt must carry exactly 2 question ids");
            }
            const Question& q1 = question_of(prompt.question_ids[0]);
            const Question& q2 = question_of(prompt.question_ids[1]);

            RngStream rng1 = stream_for("answer\x1f" + q1.id, request.sample_index);
            RngStream rng2 = stream_for("answer\x1f" + q2.id, request.sample_index);
            const std::string a1 = simulate_answer(q1, profile_, rng1).answers[0];
            const std::string a2 = simulate_answer(q2, profile_, rng2).answers[0];

            RngStream choice_rng =
                stream_for("choice\x1f" + q1.id + "\x1f" + q2.id, request.sample_index);
            bool pick_q1 = true;
            switch (profile_.comparison) {
                case ComparisonPolicy::pick_higher_latent:
                    pick_q1 = profile_.latent_of(q1.id) >= profile_.latent_of(q2.id);
                    break;
                case ComparisonPolicy::pick_random:
                    pick_q1 = choice_rng.bernoulli(0.5);
                    break;
                case ComparisonPolicy::pick_higher_latent_with_flip:
                    pick_q1 = profile_.latent_of(q1.id) >= profile_.latent_of(q2.id);
                    if (choice_rng.bernoulli(profile_.flip_rate)) pick_q1 = !pick_q1;
                    break;
            }
            return Json{{"choice", pick_q1 ? "Q1" : "Q2"},
                        {"answer_q1", a1},
                        {"answer_q2", a2}}
                .dump();
        }
        case TaskKind::equivalence_judge: {
            const std::string a = extract_line(prompt.user_text, "Answer A: ", "Answer A");
            const std::string b = extract_line(prompt.user_text, "Answer B: ", "Answer B");
            return Json{{"equivalent", profile_.judged_equivalent(a, b)}}.dump();
        }
    }
    throw ConfigError("unknown task kind value");
}

}  // namespace metacal
