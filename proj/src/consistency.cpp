#include "metacal/consistency.hpp"

#include <algorithm>
#include <cctype>

#include "metacal/errors.hpp"
#include "metacal/parallel.hpp"

namespace metacal {

namespace {

std::string normalize_multiple_choice(const std::string& raw) {
    char letter = '\0';
    for (const char c : raw) {
        if (std::isalpha(static_cast<unsigned char>(c))) {
            if (letter != '\0') {
                throw NormalizationError("multiple letters in multiple-choice answer '" + raw +
                                         "'");
            }
            letter = c;
        }
    }
    if (letter == '\0') {
        throw NormalizationError("no letter in multiple-choice answer '" + raw + "'");
    }
    return std::string(1, static_cast<char>(std::toupper(static_cast<unsigned char>(letter))));
}

std::string normalize_numeric(const std::string& raw) {
    std::string digits;
    for (const char c : raw) {
        if (std::isspace(static_cast<unsigned char>(c)) || c == '$' || c == ',') continue;
        digits += c;
    }
    if (!digits.empty() && digits.back() == '.') digits.pop_back();
    bool negative = false;
    std::size_t i = 0;
    if (i < digits.size() && (digits[i] == '-' || digits[i] == '+')) {
        negative = digits[i] == '-';
        ++i;
    }
    if (i >= digits.size()) {
        throw NormalizationError("no integer in numeric answer '" + raw + "'");
    }
    for (std::size_t j = i; j < digits.size(); ++j) {
        if (!std::isdigit(static_cast<unsigned char>(digits[j]))) {
            throw NormalizationError("no integer in numeric answer '" + raw + "'");
        }
    }
    while (i + 1 < digits.size() && digits[i] == '0') ++i;
    std::string magnitude = digits.substr(i);
    if (magnitude == "0") return "0";
    return negative ? "-" + magnitude : magnitude;
}

std::string normalize_short_answer(const std::string& raw) {
    std::string out;
    bool pending_space = false;
    for (const char c : raw) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out += ' ';
            pending_space = false;
        }
        out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    while (!out.empty()) {
        const char last = out.back();
        if (last == '.' || last == '!' || last == '?' || last == ',' || last == ';' ||
            last == ':') {
            out.pop_back();
        } else {
            break;
        }
    }
    // Terminal punctuation may expose trailing spaces ("what? " -> "what").
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

}  // namespace

std::string normalize_answer(const std::string& raw, AnswerFormat format) {
    switch (format) {
        case AnswerFormat::multiple_choice: return normalize_multiple_choice(raw);
        case AnswerFormat::numeric: return normalize_numeric(raw);
        case AnswerFormat::short_answer: return normalize_short_answer(raw);
    }
    throw ConfigError("unknown answer format value");
}

std::string unparsed_sentinel(int sample_index) {
    return "<unparsed#" + std::to_string(sample_index) + ">";
}

bool is_unparsed_sentinel(const std::string& canonical) {
    return canonical.rfind("<unparsed#", 0) == 0 && !canonical.empty() &&
           canonical.back() == '>';
}

AnswerSample make_answer_sample(const std::string& question_id, int sample_index,
                                const std::string& raw, AnswerFormat format) {
    AnswerSample sample;
    sample.question_id = question_id;
    sample.sample_index = sample_index;
    sample.raw = raw;
    try {
        sample.canonical = normalize_answer(raw, format);
    } catch (const NormalizationError&) {
        sample.canonical = unparsed_sentinel(sample_index);
    }
    return sample;
}

RemoteJudgeOracle::RemoteJudgeOracle(std::shared_ptr<Gateway> gateway, double temperature)
    : gateway_(std::move(gateway)), temperature_(temperature) {
    if (!gateway_) throw ConfigError("remote judge oracle needs a gateway");
}

bool RemoteJudgeOracle::equivalent(const Question& question, const std::string& a,
                                   const std::string& b) {
    if (a == b) return true;
    const auto key = a < b ? std::make_tuple(question.id, a, b)
                           : std::make_tuple(question.id, b, a);
    {
        std::lock_guard<std::mutex> lock(mutex_);
        const auto it = verdicts_.find(key);
        if (it != verdicts_.end()) return it->second;
    }
    CompletionRequest request;
    request.prompt = render_equivalence_prompt(question, std::get<1>(key), std::get<2>(key));
    request.temperature = temperature_;
    request.schema_id = SchemaId::equivalence_judge;
    const bool verdict = *gateway_->complete(request).equivalent;
    std::lock_guard<std::mutex> lock(mutex_);
    verdicts_.emplace(key, verdict);
    return verdict;
}

std::vector<AnswerCluster> cluster_answers(const std::vector<AnswerSample>& samples,
                                           const Question& question,
                                           EquivalenceOracle& oracle) {
    if (samples.empty()) throw ConfigError("cluster_answers needs at least one sample");
    std::vector<const AnswerSample*> ordered;
    ordered.reserve(samples.size());
    for (const AnswerSample& s : samples) {
        if (s.question_id != question.id) {
            throw ConfigError("sample for question '" + s.question_id +
                              "' mixed into clustering for '" + question.id + "'");
        }
        ordered.push_back(&s);
    }
    std::sort(ordered.begin(), ordered.end(),
              [](const AnswerSample* a, const AnswerSample* b) {
                  return a->sample_index < b->sample_index;
              });

    std::vector<AnswerCluster> clusters;
    for (const AnswerSample* sample : ordered) {
        AnswerCluster* home = nullptr;
        if (!is_unparsed_sentinel(sample->canonical)) {
            for (AnswerCluster& cluster : clusters) {
                if (is_unparsed_sentinel(cluster.representative)) continue;
                bool accepted = false;
                try {
                    accepted =
                        oracle.equivalent(question, sample->canonical, cluster.representative);
                } catch (const TransportError& e) {
                    throw TransportError("equivalence oracle failed on pair ('" +
                                         sample->canonical + "', '" + cluster.representative +
                                         "'): " + e.what());
                }
                if (accepted) {
                    home = &cluster;
                    break;
                }
            }
        }
        if (home) {
            home->members.push_back(sample->sample_index);
        } else {
            clusters.push_back(AnswerCluster{sample->canonical, {sample->sample_index}});
        }
    }
    return clusters;
}

std::pair<std::string, double> consistency_score(const std::vector<AnswerCluster>& clusters,
                                                 int n_samples) {
    if (clusters.empty()) throw ConfigError("consistency_score needs at least one cluster");
    std::size_t total = 0;
    for (const AnswerCluster& cluster : clusters) total += cluster.members.size();
    if (total != static_cast<std::size_t>(n_samples)) {
        throw ConfigError("cluster sizes sum to " + std::to_string(total) + ", expected " +
                          std::to_string(n_samples));
    }
    const AnswerCluster* best = &clusters.front();
    for (const AnswerCluster& cluster : clusters) {
        if (cluster.members.size() > best->members.size() ||
            (cluster.members.size() == best->members.size() &&
             cluster.representative < best->representative)) {
            best = &cluster;
        }
    }
    return {best->representative,
            static_cast<double>(best->members.size()) / static_cast<double>(n_samples)};
}

bool grade_answer(const std::string& canonical, const Question& question,
                  EquivalenceOracle& oracle) {
    if (is_unparsed_sentinel(canonical)) return false;
    const std::string gold = normalize_answer(question.gold, question.answer_format);
    if (question.answer_format == AnswerFormat::short_answer) {
        return oracle.equivalent(question, canonical, gold);
    }
    return canonical == gold;
}

ConsistencyBuild build_consistency_records(const QuestionSet& set, Gateway& gateway,
                                           int n_samples, double temperature,
                                           EquivalenceOracle& oracle, int parallelism) {
    if (n_samples < 1) throw ConfigError("n_samples must be >= 1");

    struct Slot {
        std::optional<ConsistencyRecord> record;
        std::optional<Exclusion> exclusion;
    };
    std::vector<Slot> slots(set.size());

    parallel_for(set.size(), parallelism, [&](std::size_t index) {
        const Question& question = set.questions[index];
        try {
            std::vector<AnswerSample> samples;
            samples.reserve(static_cast<std::size_t>(n_samples));
            for (int i = 0; i < n_samples; ++i) {
                CompletionRequest request;
                request.prompt = render_single_prompt(question);
                request.temperature = temperature;
                request.sample_index = i;
                request.schema_id = SchemaId::single_question;
                const ParsedResponse response = gateway.complete(request);
                samples.push_back(make_answer_sample(question.id, i, response.answers[0],
                                                     question.answer_format));
            }
            const std::vector<AnswerCluster> clusters =
                cluster_answers(samples, question, oracle);
            const auto [modal, score] = consistency_score(clusters, n_samples);

            ConsistencyRecord record;
            record.question_id = question.id;
            record.modal_answer = modal;
            record.s = score;
            record.n_samples = n_samples;
            record.correct = grade_answer(modal, question, oracle);
            for (const AnswerCluster& cluster : clusters) {
                record.cluster_sizes.push_back(static_cast<int>(cluster.members.size()));
            }
            record.samples = std::move(samples);
            slots[index].record = std::move(record);
        } catch (const BackendError& e) {
            slots[index].exclusion = Exclusion{question.id, e.what()};
        }
    });

    ConsistencyBuild build;
    for (Slot& slot : slots) {
        if (slot.record) build.records.push_back(std::move(*slot.record));
        if (slot.exclusion) build.exclusions.push_back(std::move(*slot.exclusion));
    }
    return build;
}

Json consistency_record_to_json(const ConsistencyRecord& record) {
    Json samples = Json::array();
    for (const AnswerSample& sample : record.samples) {
        samples.push_back(Json{{"i", sample.sample_index},
                               {"raw", sample.raw},
                               {"canonical", sample.canonical}});
    }
    return Json{{"id", record.question_id}, {"modal", record.modal_answer},
                {"s", record.s},           {"n", record.n_samples},
                {"correct", record.correct}, {"clusters", record.cluster_sizes},
                {"samples", std::move(samples)}};
}

ConsistencyRecord consistency_record_from_json(const Json& doc) {
    ConsistencyRecord record;
    try {
        record.question_id = doc.at("id").get<std::string>();
        record.modal_answer = doc.at("modal").get<std::string>();
        record.s = doc.at("s").get<double>();
        record.n_samples = doc.at("n").get<int>();
        record.correct = doc.at("correct").get<bool>();
        record.cluster_sizes = doc.at("clusters").get<std::vector<int>>();
        for (const Json& sample : doc.at("samples")) {
            AnswerSample s;
            s.question_id = record.question_id;
            s.sample_index = sample.at("i").get<int>();
            s.raw = sample.at("raw").get<std::string>();
            s.canonical = sample.at("canonical").get<std::string>();
            record.samples.push_back(std::move(s));
        }
    } catch (const Json::exception& e) {
        throw DependencyError(std::string("malformed consistency record: ") + e.what());
    }
    return record;
}

void write_consistency_records(const std::vector<ConsistencyRecord>& records,
                               const std::filesystem::path& path) {
    std::vector<Json> lines;
    lines.reserve(records.size());
    for (const ConsistencyRecord& record : records) {
        lines.push_back(consistency_record_to_json(record));
    }
    write_jsonl(path, lines);
}

std::vector<ConsistencyRecord> read_consistency_records(const std::filesystem::path& path) {
    std::vector<ConsistencyRecord> records;
    for (const Json& doc : read_jsonl(path)) {
        records.push_back(consistency_record_from_json(doc));
    }
    return records;
}

void write_exclusions(const std::vector<Exclusion>& exclusions,
                      const std::filesystem::path& path) {
    std::vector<Json> lines;
    lines.reserve(exclusions.size());
    for (const Exclusion& exclusion : exclusions) {
        lines.push_back(Json{{"id", exclusion.question_id}, {"reason", exclusion.reason}});
    }
    write_jsonl(path, lines);
}

}  // namespace metacal
