#include "metacal/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <ctime>
#include <numeric>
#include <unordered_set>

#include "metacal/digest.hpp"
#include "metacal/errors.hpp"
#include "metacal/rng.hpp"

namespace metacal {

namespace {

std::string now_utc_iso() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

bool is_integer_literal(const std::string& s) {
    std::size_t i = (!s.empty() && s[0] == '-') ? 1 : 0;
    if (i >= s.size()) return false;
    return std::all_of(s.begin() + static_cast<std::ptrdiff_t>(i), s.end(),
                       [](unsigned char c) { return std::isdigit(c) != 0; });
}

const Json& require_field(const Json& record, const char* key) {
    const auto it = record.find(key);
    if (it == record.end()) {
        throw CorpusError(std::string("missing field '") + key + "'");
    }
    return *it;
}

std::string require_string(const Json& record, const char* key) {
    const Json& value = require_field(record, key);
    if (!value.is_string()) {
        throw CorpusError(std::string("field '") + key + "' must be a string");
    }
    return value.get<std::string>();
}

}  // namespace

const char* to_string(AnswerFormat format) {
    switch (format) {
        case AnswerFormat::multiple_choice: return "multiple_choice";
        case AnswerFormat::numeric: return "numeric";
        case AnswerFormat::short_answer: return "short_answer";
    }
    throw ConfigError("unknown answer format value");
}

AnswerFormat answer_format_from_string(const std::string& name) {
    if (name == "multiple_choice") return AnswerFormat::multiple_choice;
    if (name == "numeric") return AnswerFormat::numeric;
    if (name == "short_answer") return AnswerFormat::short_answer;
    throw CorpusError("field 'format' has unknown value '" + name + "'");
}

void validate_question(const Question& question) {
    if (question.id.empty()) throw CorpusError("field 'id' must be nonempty");
    if (question.text.empty()) throw CorpusError("field 'question' must be nonempty");
    if (question.gold.empty()) throw CorpusError("field 'gold' must be nonempty");
    if (question.answer_format == AnswerFormat::multiple_choice) {
        if (question.options.size() < 2) {
            throw CorpusError("field 'options' needs >= 2 entries for multiple_choice");
        }
        std::unordered_set<std::string> letters;
        for (const Option& opt : question.options) {
            if (opt.letter.empty()) {
                throw CorpusError("field 'options' has an entry with empty letter");
            }
            if (!letters.insert(opt.letter).second) {
                throw CorpusError("field 'options' repeats letter '" + opt.letter + "'");
            }
        }
        if (!letters.contains(question.gold)) {
            throw CorpusError("field 'gold' ('" + question.gold +
                              "') is not one of the option letters");
        }
    } else {
        if (!question.options.empty()) {
            throw CorpusError("field 'options' is only allowed for multiple_choice");
        }
        if (question.answer_format == AnswerFormat::numeric &&
            !is_integer_literal(question.gold)) {
            throw CorpusError("field 'gold' ('" + question.gold +
                              "') does not parse as an integer");
        }
    }
}

Json question_to_json(const Question& question) {
    Json record{
        {"id", question.id},
        {"domain", question.domain_tag},
        {"format", to_string(question.answer_format)},
        {"question", question.text},
        {"gold", question.gold},
    };
    if (question.answer_format == AnswerFormat::multiple_choice) {
        Json options = Json::array();
        for (const Option& opt : question.options) {
            options.push_back(Json{{"letter", opt.letter}, {"text", opt.text}});
        }
        record["options"] = std::move(options);
    }
    return record;
}

Question question_from_json(const Json& record) {
    if (!record.is_object()) throw CorpusError("record must be a JSON object");
    Question q;
    q.id = require_string(record, "id");
    q.domain_tag = require_string(record, "domain");
    q.answer_format = answer_format_from_string(require_string(record, "format"));
    q.text = require_string(record, "question");
    q.gold = require_string(record, "gold");
    if (record.contains("options")) {
        const Json& options = record.at("options");
        if (!options.is_array()) throw CorpusError("field 'options' must be an array");
        for (const Json& entry : options) {
            if (!entry.is_object()) {
                throw CorpusError("field 'options' entries must be objects");
            }
            q.options.push_back(
                Option{require_string(entry, "letter"), require_string(entry, "text")});
        }
    }
    validate_question(q);
    return q;
}

const Question* QuestionSet::find(const std::string& id) const {
    for (const Question& q : questions) {
        if (q.id == id) return &q;
    }
    return nullptr;
}

const Question& QuestionSet::require(const std::string& id) const {
    const Question* q = find(id);
    if (!q) throw CorpusError("unknown question id '" + id + "'");
    return *q;
}

std::string corpus_to_jsonl(const QuestionSet& set) {
    std::string out;
    for (const Question& q : set.questions) {
        out += to_jsonl_line(question_to_json(q));
        out += '\n';
    }
    return out;
}

QuestionSet make_question_set(std::vector<Question> questions, std::string source) {
    std::unordered_set<std::string> ids;
    for (const Question& q : questions) {
        validate_question(q);
        if (!ids.insert(q.id).second) {
            throw CorpusError("duplicate question id '" + q.id + "'");
        }
    }
    QuestionSet set;
    set.questions = std::move(questions);
    set.manifest.source = std::move(source);
    set.manifest.loaded_at = now_utc_iso();
    set.manifest.digest = sha256_hex(corpus_to_jsonl(set));
    return set;
}

QuestionSet load_corpus(const std::filesystem::path& path, FormatHint hint) {
    std::vector<Question> questions;
    for_each_jsonl(path, [&](std::size_t line_no, const Json& record) {
        Question q;
        try {
            q = question_from_json(record);
        } catch (const CorpusError& e) {
            throw CorpusError(path.string() + ": line " + std::to_string(line_no) + ": " +
                              e.what());
        }
        const bool hint_ok =
            hint == FormatHint::any ||
            (hint == FormatHint::multiple_choice &&
             q.answer_format == AnswerFormat::multiple_choice) ||
            (hint == FormatHint::numeric && q.answer_format == AnswerFormat::numeric) ||
            (hint == FormatHint::short_answer && q.answer_format == AnswerFormat::short_answer);
        if (!hint_ok) {
            throw CorpusError(path.string() + ": line " + std::to_string(line_no) +
                              ": field 'format' does not match the requested format");
        }
        questions.push_back(std::move(q));
    });
    try {
        return make_question_set(std::move(questions), path.string());
    } catch (const CorpusError& e) {
        throw CorpusError(path.string() + ": " + e.what());
    }
}

void save_corpus(const QuestionSet& set, const std::filesystem::path& path) {
    std::vector<Json> records;
    records.reserve(set.questions.size());
    for (const Question& q : set.questions) {
        records.push_back(question_to_json(q));
    }
    write_jsonl(path, records);
}

CorpusSplit split_corpus(const QuestionSet& set, std::size_t train_n, std::size_t test_n,
                         std::uint64_t seed) {
    if (train_n + test_n > set.size()) {
        throw ConfigError("split sizes " + std::to_string(train_n) + "+" +
                          std::to_string(test_n) + " exceed corpus size " +
                          std::to_string(set.size()));
    }
    std::vector<std::size_t> order(set.size());
    std::iota(order.begin(), order.end(), 0);
    RngStream rng = RngStream(seed).fork("corpus-split");
    rng.shuffle(order);

    auto subset = [&](std::size_t offset, std::size_t count, const char* tag) {
        std::vector<std::size_t> picked(order.begin() + static_cast<std::ptrdiff_t>(offset),
                                        order.begin() +
                                            static_cast<std::ptrdiff_t>(offset + count));
        std::sort(picked.begin(), picked.end());
        std::vector<Question> questions;
        questions.reserve(count);
        for (const std::size_t idx : picked) questions.push_back(set.questions[idx]);
        return make_question_set(std::move(questions), set.manifest.source + "#" + tag);
    };

    CorpusSplit split;
    split.train = subset(0, train_n, "train");
    split.test = subset(train_n, test_n, "test");
    split.seed = seed;
    return split;
}

Json split_manifest(const CorpusSplit& split) {
    Json train_ids = Json::array();
    for (const Question& q : split.train.questions) train_ids.push_back(q.id);
    Json test_ids = Json::array();
    for (const Question& q : split.test.questions) test_ids.push_back(q.id);
    return Json{{"seed", split.seed}, {"train_ids", std::move(train_ids)},
                {"test_ids", std::move(test_ids)}};
}

CorpusSplit apply_split_manifest(const QuestionSet& set, const Json& manifest) {
    for (const char* key : {"seed", "train_ids", "test_ids"}) {
        if (!manifest.contains(key)) {
            throw DependencyError(std::string("split manifest missing '") + key + "'");
        }
    }
    auto gather = [&](const char* key, const char* tag) {
        std::vector<Question> questions;
        for (const Json& id : manifest.at(key)) {
            questions.push_back(set.require(id.get<std::string>()));
        }
        return make_question_set(std::move(questions), set.manifest.source + "#" + tag);
    };
    CorpusSplit split;
    split.train = gather("train_ids", "train");
    split.test = gather("test_ids", "test");
    split.seed = manifest.at("seed").get<std::uint64_t>();
    for (const Question& q : split.test.questions) {
        if (split.train.find(q.id)) {
            throw DependencyError("split manifest assigns id '" + q.id +
                                  "' to both train and test");
        }
    }
    return split;
}

}  // namespace metacal
