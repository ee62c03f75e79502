#include "metacal/targets.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>

#include "metacal/digest.hpp"
#include "metacal/errors.hpp"
#include "metacal/gateway.hpp"

namespace metacal {

AccuracyCurve::AccuracyCurve(int n_levels, std::string source)
    : n_levels_(n_levels), source_(std::move(source)) {
    if (n_levels_ < 1) throw ConfigError("accuracy curve needs at least one level");
    counts_.assign(static_cast<std::size_t>(n_levels_), 0);
    accuracy_.assign(static_cast<std::size_t>(n_levels_), 0.0);
}

int AccuracyCurve::level_index(double s) const {
    const double scaled = s * n_levels_;
    const int level = static_cast<int>(std::lround(scaled));
    if (std::abs(scaled - level) > 1e-9 || level < 1 || level > n_levels_) {
        throw ConfigError("consistency " + Json(s).dump() + " is not on the 1/" +
                          std::to_string(n_levels_) + " grid");
    }
    return level - 1;
}

double AccuracyCurve::level_value(int index) const {
    if (index < 0 || index >= n_levels_) throw ConfigError("level index out of range");
    return static_cast<double>(index + 1) / static_cast<double>(n_levels_);
}

void AccuracyCurve::set_level(int index, int count, double accuracy) {
    if (index < 0 || index >= n_levels_) throw ConfigError("level index out of range");
    if (count < 0) throw ConfigError("level count must be >= 0");
    if (count > 0 && (accuracy < 0.0 || accuracy > 1.0)) {
        throw ConfigError("level accuracy must be in [0,1]");
    }
    counts_[static_cast<std::size_t>(index)] = count;
    accuracy_[static_cast<std::size_t>(index)] = count > 0 ? accuracy : 0.0;
}

int AccuracyCurve::count_at(double s) const {
    return counts_[static_cast<std::size_t>(level_index(s))];
}

bool AccuracyCurve::populated(double s) const { return count_at(s) > 0; }

double AccuracyCurve::accuracy_at(double s) const {
    const int index = level_index(s);
    if (counts_[static_cast<std::size_t>(index)] > 0) {
        return accuracy_[static_cast<std::size_t>(index)];
    }
    for (int distance = 1; distance < n_levels_; ++distance) {
        const int lower = index - distance;
        if (lower >= 0 && counts_[static_cast<std::size_t>(lower)] > 0) {
            return accuracy_[static_cast<std::size_t>(lower)];
        }
        const int upper = index + distance;
        if (upper < n_levels_ && counts_[static_cast<std::size_t>(upper)] > 0) {
            return accuracy_[static_cast<std::size_t>(upper)];
        }
    }
    throw ConfigError("accuracy curve has no populated level");
}

int AccuracyCurve::total_count() const {
    int total = 0;
    for (const int c : counts_) total += c;
    return total;
}

Json AccuracyCurve::to_json() const {
    Json levels = Json::array();
    for (int i = 0; i < n_levels_; ++i) {
        const int count = counts_[static_cast<std::size_t>(i)];
        levels.push_back(Json{{"s", level_value(i)},
                              {"count", count},
                              {"accuracy", count > 0
                                               ? Json(accuracy_[static_cast<std::size_t>(i)])
                                               : Json(nullptr)}});
    }
    return Json{{"n", n_levels_}, {"source", source_}, {"levels", std::move(levels)}};
}

AccuracyCurve AccuracyCurve::from_json(const Json& doc) {
    try {
        AccuracyCurve curve(doc.at("n").get<int>(), doc.at("source").get<std::string>());
        const Json& levels = doc.at("levels");
        if (static_cast<int>(levels.size()) != curve.n_levels_) {
            throw DependencyError("curve level count disagrees with n");
        }
        for (int i = 0; i < curve.n_levels_; ++i) {
            const Json& level = levels.at(static_cast<std::size_t>(i));
            const int count = level.at("count").get<int>();
            curve.set_level(i, count,
                            count > 0 ? level.at("accuracy").get<double>() : 0.0);
        }
        return curve;
    } catch (const Json::exception& e) {
        throw DependencyError(std::string("malformed accuracy curve: ") + e.what());
    }
}

AccuracyCurve empirical_accuracy_curve(const std::vector<ConsistencyRecord>& records,
                                       std::string source) {
    if (records.empty()) throw ConfigError("accuracy curve needs at least one record");
    const int n_samples = records.front().n_samples;
    AccuracyCurve curve(n_samples, std::move(source));
    std::vector<int> counts(static_cast<std::size_t>(n_samples), 0);
    std::vector<int> correct(static_cast<std::size_t>(n_samples), 0);
    for (const ConsistencyRecord& record : records) {
        if (record.n_samples != n_samples) {
            throw ConfigError("records mix sample counts " + std::to_string(n_samples) +
                              " and " + std::to_string(record.n_samples));
        }
        const auto index = static_cast<std::size_t>(curve.level_index(record.s));
        counts[index] += 1;
        correct[index] += record.correct ? 1 : 0;
    }
    for (int i = 0; i < n_samples; ++i) {
        const auto index = static_cast<std::size_t>(i);
        if (counts[index] > 0) {
            curve.set_level(i, counts[index],
                            static_cast<double>(correct[index]) / counts[index]);
        }
    }
    return curve;
}

ConfidenceTarget target_confidence(const ConsistencyRecord& record, const AccuracyCurve& curve,
                                   const RngStream& rng) {
    ConfidenceTarget target;
    target.question_id = record.question_id;
    target.s = record.s;
    target.a_of_s = curve.accuracy_at(record.s);
    RngStream noise = rng.fork("epsilon\x1f" + record.question_id);
    target.epsilon = noise.uniform(-0.05, 0.05);
    target.target = std::clamp(target.a_of_s + target.epsilon, 0.0, 1.0);
    return target;
}

Json confidence_target_to_json(const ConfidenceTarget& target) {
    return Json{{"id", target.question_id},
                {"s", target.s},
                {"a_of_s", target.a_of_s},
                {"epsilon", target.epsilon},
                {"target", target.target}};
}

ConfidenceTarget confidence_target_from_json(const Json& doc) {
    ConfidenceTarget target;
    try {
        target.question_id = doc.at("id").get<std::string>();
        target.s = doc.at("s").get<double>();
        target.a_of_s = doc.at("a_of_s").get<double>();
        target.epsilon = doc.at("epsilon").get<double>();
        target.target = doc.at("target").get<double>();
    } catch (const Json::exception& e) {
        throw DependencyError(std::string("malformed confidence target: ") + e.what());
    }
    return target;
}

BalanceResult balance_by_consistency(const std::vector<ConsistencyRecord>& records,
                                     double max_gap, RngStream& rng) {
    if (records.empty()) throw ConfigError("balance_by_consistency needs records");
    if (max_gap < 0.0 || max_gap >= 1.0) throw ConfigError("max_gap must be in [0,1)");

    std::map<double, int> level_counts;
    for (const ConsistencyRecord& record : records) level_counts[record.s] += 1;

    BalanceResult result;
    if (level_counts.size() == 1) {
        result.records = records;
        result.single_level = true;
        return result;
    }

    double top_level = 0.0;
    int top = 0;
    int second = 0;
    for (const auto& [level, count] : level_counts) {
        if (count > top) {
            second = top;
            top = count;
            top_level = level;
        } else if (count > second) {
            second = count;
        }
    }

    if (static_cast<double>(top - second) <= max_gap * top + 1e-12) {
        result.records = records;
        return result;
    }

    // Largest t with (t - second)/t <= max_gap; for {100, 40} at 0.20 -> 50.
    const int keep = static_cast<int>(std::floor(second / (1.0 - max_gap) + 1e-9));

    std::vector<std::size_t> top_positions;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].s == top_level) top_positions.push_back(i);
    }
    rng.shuffle(top_positions);
    top_positions.resize(static_cast<std::size_t>(keep));
    const std::set<std::size_t> kept(top_positions.begin(), top_positions.end());

    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].s != top_level || kept.count(i)) result.records.push_back(records[i]);
    }
    return result;
}

const char* to_string(TaskTag tag) { return tag == TaskTag::S ? "S" : "C"; }

TaskTag task_tag_from_string(const std::string& name) {
    if (name == "S") return TaskTag::S;
    if (name == "C") return TaskTag::C;
    throw ConfigError("unknown task tag '" + name + "'");
}

bool operator==(const SftInstance& a, const SftInstance& b) {
    return a.prompt_text == b.prompt_text && a.system_text == b.system_text &&
           a.target_text == b.target_text && a.task_tag == b.task_tag &&
           a.question_ids == b.question_ids;
}

std::string format_single_target(const std::string& modal_answer, double target) {
    char buffer[16];
    std::snprintf(buffer, sizeof(buffer), "%.2f", target);
    return "The answer is " + modal_answer + " and my confidence score is " + buffer;
}

std::pair<std::string, double> parse_single_target(const std::string& text) {
    static const std::string prefix = "The answer is ";
    static const std::string infix = " and my confidence score is ";
    if (text.rfind(prefix, 0) != 0) {
        throw DependencyError("target sentence does not start with '" + prefix + "': " + text);
    }
    const std::size_t split = text.rfind(infix);
    if (split == std::string::npos || split < prefix.size()) {
        throw DependencyError("target sentence has no confidence clause: " + text);
    }
    const std::string answer = text.substr(prefix.size(), split - prefix.size());
    const std::string score = text.substr(split + infix.size());
    if (answer.empty()) throw DependencyError("target sentence has an empty answer: " + text);

    const std::size_t dot = score.find('.');
    bool well_formed = dot != std::string::npos && dot >= 1 && score.size() == dot + 3;
    for (std::size_t i = 0; well_formed && i < score.size(); ++i) {
        if (i != dot && !std::isdigit(static_cast<unsigned char>(score[i]))) well_formed = false;
    }
    if (!well_formed) {
        throw DependencyError("confidence '" + score + "' is not a 2-decimal score: " + text);
    }
    const double value = std::stod(score);
    if (value < 0.0 || value > 1.0) {
        throw DependencyError("confidence " + score + " outside [0,1]: " + text);
    }
    return {answer, value};
}

std::string format_comparison_target(PairChoice label) {
    return std::string("The answer is ") + to_string(label);
}

std::vector<SftInstance> build_single_sft(const std::vector<ConsistencyRecord>& records,
                                          const AccuracyCurve& curve, const QuestionSet& set,
                                          const RngStream& rng) {
    std::vector<SftInstance> out;
    out.reserve(records.size());
    for (const ConsistencyRecord& record : records) {
        const Question& question = set.require(record.question_id);
        const ConfidenceTarget target = target_confidence(record, curve, rng);
        const PromptInstance prompt = render_single_prompt(question);
        SftInstance instance;
        instance.prompt_text = prompt.user_text;
        instance.system_text = prompt.system_text;
        instance.target_text = format_single_target(record.modal_answer, target.target);
        instance.task_tag = TaskTag::S;
        instance.question_ids = {record.question_id};
        out.push_back(std::move(instance));
    }
    return out;
}

Json comparison_instance_to_json(const ComparisonInstance& instance) {
    return Json{{"q1", instance.q1_id},
                {"q2", instance.q2_id},
                {"s1", instance.s1},
                {"s2", instance.s2},
                {"label", to_string(instance.label)}};
}

ComparisonInstance comparison_instance_from_json(const Json& doc) {
    ComparisonInstance instance;
    try {
        instance.q1_id = doc.at("q1").get<std::string>();
        instance.q2_id = doc.at("q2").get<std::string>();
        instance.s1 = doc.at("s1").get<double>();
        instance.s2 = doc.at("s2").get<double>();
        instance.label = pair_choice_from_string(doc.at("label").get<std::string>());
    } catch (const Json::exception& e) {
        throw DependencyError(std::string("malformed comparison instance: ") + e.what());
    } catch (const ConfigError& e) {
        throw DependencyError(std::string("malformed comparison instance: ") + e.what());
    }
    return instance;
}

std::vector<ComparisonInstance> build_pair_sft(const std::vector<ConsistencyRecord>& records,
                                               int n_pairs, RngStream& rng) {
    if (n_pairs < 0) throw ConfigError("n_pairs must be >= 0");
    const std::size_t total = records.size();

    std::map<double, std::uint64_t> level_counts;
    for (const ConsistencyRecord& record : records) level_counts[record.s] += 1;
    std::uint64_t same_level_pairs = 0;
    for (const auto& [level, count] : level_counts) same_level_pairs += count * count;
    const std::uint64_t capacity =
        (static_cast<std::uint64_t>(total) * total - same_level_pairs) / 2;

    if (capacity == 0) throw ConfigError("no permissible pairs: every record has the same s");
    if (static_cast<std::uint64_t>(n_pairs) > capacity) {
        throw ConfigError("n_pairs " + std::to_string(n_pairs) + " exceeds the " +
                          std::to_string(capacity) + " distinct unequal-consistency pairs");
    }

    // Distinct unordered index pairs, uniform over the permissible set.
    std::vector<std::pair<std::size_t, std::size_t>> chosen;
    chosen.reserve(static_cast<std::size_t>(n_pairs));
    if (static_cast<std::uint64_t>(n_pairs) * 3 >= capacity) {
        for (std::size_t i = 0; i < total; ++i) {
            for (std::size_t j = i + 1; j < total; ++j) {
                if (records[i].s != records[j].s) chosen.emplace_back(i, j);
            }
        }
        rng.shuffle(chosen);
        chosen.resize(static_cast<std::size_t>(n_pairs));
    } else {
        std::set<std::pair<std::size_t, std::size_t>> seen;
        while (chosen.size() < static_cast<std::size_t>(n_pairs)) {
            const std::size_t i = rng.below(total);
            const std::size_t j = rng.below(total);
            if (i == j || records[i].s == records[j].s) continue;
            const std::pair<std::size_t, std::size_t> key =
                i < j ? std::make_pair(i, j) : std::make_pair(j, i);
            if (seen.insert(key).second) chosen.push_back(key);
        }
    }

    // Exactly ceil(n/2) pairs put the higher-s member at Q1, the rest at Q2.
    std::vector<PairChoice> labels(static_cast<std::size_t>((n_pairs + 1) / 2),
                                   PairChoice::Q1);
    labels.resize(static_cast<std::size_t>(n_pairs), PairChoice::Q2);
    rng.shuffle(labels);

    std::vector<ComparisonInstance> out;
    out.reserve(static_cast<std::size_t>(n_pairs));
    for (std::size_t k = 0; k < chosen.size(); ++k) {
        const auto [lo, hi] = chosen[k];
        const std::size_t higher = records[lo].s > records[hi].s ? lo : hi;
        const std::size_t lower = higher == lo ? hi : lo;
        const std::size_t first = labels[k] == PairChoice::Q1 ? higher : lower;
        const std::size_t second = labels[k] == PairChoice::Q1 ? lower : higher;
        ComparisonInstance instance;
        instance.q1_id = records[first].question_id;
        instance.q2_id = records[second].question_id;
        instance.s1 = records[first].s;
        instance.s2 = records[second].s;
        instance.label = labels[k];
        out.push_back(std::move(instance));
    }
    return out;
}

std::vector<SftInstance> build_comparison_sft(const std::vector<ComparisonInstance>& pairs,
                                              const QuestionSet& set) {
    std::vector<SftInstance> out;
    out.reserve(pairs.size());
    for (const ComparisonInstance& pair : pairs) {
        const Question& q1 = set.require(pair.q1_id);
        const Question& q2 = set.require(pair.q2_id);
        const PromptInstance prompt = render_comparison_prompt(q1, q2);
        SftInstance instance;
        instance.prompt_text = prompt.user_text;
        instance.system_text = prompt.system_text;
        instance.target_text = format_comparison_target(pair.label);
        instance.task_tag = TaskTag::C;
        instance.question_ids = {pair.q1_id, pair.q2_id};
        out.push_back(std::move(instance));
    }
    return out;
}

std::vector<SftInstance> merge_multitask(std::vector<SftInstance> s_set,
                                         std::vector<SftInstance> c_set, RngStream& rng) {
    std::vector<SftInstance> merged = std::move(s_set);
    merged.insert(merged.end(), std::make_move_iterator(c_set.begin()),
                  std::make_move_iterator(c_set.end()));
    rng.shuffle(merged);
    return merged;
}

Json export_finetune_file(const std::vector<SftInstance>& instances,
                          const std::filesystem::path& path, Json extra) {
    std::vector<Json> lines;
    lines.reserve(instances.size());
    int s_count = 0;
    int c_count = 0;
    for (const SftInstance& instance : instances) {
        Json messages = Json::array();
        if (instance.system_text) {
            messages.push_back(Json{{"role", "system"}, {"content", *instance.system_text}});
        }
        messages.push_back(Json{{"role", "user"}, {"content", instance.prompt_text}});
        messages.push_back(Json{{"role", "assistant"}, {"content", instance.target_text}});
        lines.push_back(Json{{"messages", std::move(messages)},
                             {"meta", Json{{"task", to_string(instance.task_tag)},
                                           {"question_ids", instance.question_ids}}}});
        (instance.task_tag == TaskTag::S ? s_count : c_count) += 1;
    }
    write_jsonl(path, lines);

    Json manifest{
        {"file", path.filename().string()},
        {"sha256", sha256_file(path)},
        {"counts",
         Json{{"S", s_count}, {"C", c_count}, {"total", s_count + c_count}}},
        // Provider defaults recorded for reference; this toolkit never trains.
        {"advisory_hyperparameters",
         Json{{"epochs", 10}, {"learning_rate_multiplier", 2}, {"alternate_epochs", 5},
              {"executed", false}}}};
    for (auto& [key, value] : extra.items()) manifest[key] = value;
    return manifest;
}

std::vector<SftInstance> read_finetune_file(const std::filesystem::path& path) {
    std::vector<SftInstance> out;
    for (const Json& doc : read_jsonl(path)) {
        try {
            const Json& messages = doc.at("messages");
            SftInstance instance;
            std::size_t cursor = 0;
            if (messages.size() == 3) {
                if (messages.at(0).at("role") != "system") {
                    throw DependencyError("expected a system message first");
                }
                instance.system_text = messages.at(0).at("content").get<std::string>();
                cursor = 1;
            } else if (messages.size() != 2) {
                throw DependencyError("expected 2 or 3 chat messages, got " +
                                      std::to_string(messages.size()));
            }
            if (messages.at(cursor).at("role") != "user" ||
                messages.at(cursor + 1).at("role") != "assistant") {
                throw DependencyError("chat messages must be [system?, user, assistant]");
            }
            instance.prompt_text = messages.at(cursor).at("content").get<std::string>();
            instance.target_text = messages.at(cursor + 1).at("content").get<std::string>();
            instance.task_tag =
                task_tag_from_string(doc.at("meta").at("task").get<std::string>());
            instance.question_ids =
                doc.at("meta").at("question_ids").get<std::vector<std::string>>();
            out.push_back(std::move(instance));
        } catch (const Json::exception& e) {
            throw DependencyError(std::string("malformed fine-tune line: ") + e.what());
        } catch (const ConfigError& e) {
            throw DependencyError(std::string("malformed fine-tune line: ") + e.what());
        }
    }
    return out;
}

}  // namespace metacal
