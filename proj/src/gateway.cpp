#include "metacal/gateway.hpp"

#include <utility>

#include "metacal/digest.hpp"
#include "metacal/errors.hpp"

namespace metacal {

namespace {

constexpr char kFieldSep = '\x1f';

std::string option_lines(const Question& q) {
    std::string out;
    for (const Option& opt : q.options) {
        out += opt.letter;
        out += ": ";
        out += opt.text;
        out += '\n';
    }
    return out;
}

std::string comparison_block(const Question& q, int position) {
    std::string out = "Q" + std::to_string(position) + ": " + q.text + "\n";
    if (q.answer_format == AnswerFormat::multiple_choice) out += option_lines(q);
    return out;
}

double require_number(const Json& payload, const char* key, const std::string& raw) {
    const auto it = payload.find(key);
    if (it == payload.end()) {
        throw ParseError(std::string("completion missing '") + key + "'", raw);
    }
    if (!it->is_number()) {
        throw ParseError(std::string("completion field '") + key + "' is not a number", raw);
    }
    return it->get<double>();
}

std::string require_answer_string(const Json& payload, const char* key,
                                  const std::string& raw) {
    const auto it = payload.find(key);
    if (it == payload.end()) {
        throw ParseError(std::string("completion missing '") + key + "'", raw);
    }
    if (it->is_string()) return it->get<std::string>();
    // Structured numeric answers legitimately arrive as JSON integers.
    if (it->is_number_integer()) return std::to_string(it->get<long long>());
    throw ParseError(std::string("completion field '") + key + "' is not an answer string",
                     raw);
}

}  // namespace

const char* const kSingleQuestionSystemText =
    "When answering a question, provide the answer and a confidence score between 0 and 1 "
    "for the answer";

const char* to_string(TaskKind task) {
    switch (task) {
        case TaskKind::single_question: return "single_question";
        case TaskKind::comparison: return "comparison";
        case TaskKind::equivalence_judge: return "equivalence_judge";
    }
    throw ConfigError("unknown task kind value");
}

const char* to_string(SchemaId schema) {
    switch (schema) {
        case SchemaId::single_question: return "single_question";
        case SchemaId::comparison: return "comparison";
        case SchemaId::equivalence_judge: return "equivalence_judge";
    }
    throw ConfigError("unknown schema value");
}

SchemaId schema_for(TaskKind task) {
    switch (task) {
        case TaskKind::single_question: return SchemaId::single_question;
        case TaskKind::comparison: return SchemaId::comparison;
        case TaskKind::equivalence_judge: return SchemaId::equivalence_judge;
    }
    throw ConfigError("unknown task kind value");
}

std::string PromptInstance::digest() const {
    std::string material = to_string(task);
    material += kFieldSep;
    material += system_text.value_or("");
    material += kFieldSep;
    material += user_text;
    for (const std::string& id : question_ids) {
        material += kFieldSep;
        material += id;
    }
    return sha256_hex(material);
}

PromptInstance render_single_prompt(const Question& question) {
    PromptInstance prompt;
    prompt.task = TaskKind::single_question;
    prompt.system_text = kSingleQuestionSystemText;
    prompt.question_ids = {question.id};
    switch (question.answer_format) {
        case AnswerFormat::multiple_choice:
            prompt.user_text = "Question: " + question.text + "\nOptions:\n" +
                               option_lines(question) + "Answer:\nConfidence score (0-1):";
            break;
        case AnswerFormat::numeric:
            prompt.user_text =
                "Question: " + question.text + "\nAnswer:\nConfidence score (0-1):";
            break;
        case AnswerFormat::short_answer:
            prompt.user_text =
                "For the following problem, provide a short answer with just a few words.\n"
                "Question: " +
                question.text + "\nAnswer:\nConfidence score (0-1):";
            break;
    }
    return prompt;
}

PromptInstance render_comparison_prompt(const Question& q1, const Question& q2) {
    if (q1.id == q2.id) {
        throw ConfigError("comparison prompt needs two distinct questions, got '" + q1.id +
                          "' twice");
    }
    PromptInstance prompt;
    prompt.task = TaskKind::comparison;
    prompt.question_ids = {q1.id, q2.id};

    const std::string header =
        "Determine for which of the two following questions, your confidence score is "
        "higher\n\n";
    const std::string tail =
        "Is your confidence in answering correctly higher for question Q1 or question Q2? "
        "What are the answers to Q1 and Q2?";
    const bool any_mc = q1.answer_format == AnswerFormat::multiple_choice ||
                        q2.answer_format == AnswerFormat::multiple_choice;
    if (any_mc) {
        prompt.user_text =
            header + comparison_block(q1, 1) + "\n" + comparison_block(q2, 2) + tail;
    } else {
        prompt.user_text =
            header + "Q1: " + q1.text + "\nQ2: " + q2.text + "\n\n" + tail;
    }
    return prompt;
}

PromptInstance render_equivalence_prompt(const Question& question, const std::string& answer_a,
                                         const std::string& answer_b) {
    PromptInstance prompt;
    prompt.task = TaskKind::equivalence_judge;
    prompt.question_ids = {question.id};
    prompt.user_text =
        "Decide whether two answers to the same question mean the same thing in context.\n"
        "Question: " +
        question.text + "\nAnswer A: " + answer_a + "\nAnswer B: " + answer_b +
        "\nRespond with JSON: {\"equivalent\": true|false}.";
    return prompt;
}

ParsedResponse parse_completion(const std::string& raw_text, SchemaId schema) {
    Json payload = Json::parse(raw_text, nullptr, false);
    if (payload.is_discarded() || !payload.is_object()) {
        throw ParseError("completion is not a JSON object", raw_text);
    }
    ParsedResponse response;
    response.raw_text = raw_text;
    switch (schema) {
        case SchemaId::single_question: {
            response.answers = {require_answer_string(payload, "answer", raw_text)};
            const double c = require_number(payload, "confidence", raw_text);
            if (!(c >= 0.0 && c <= 1.0)) {
                throw ParseError("confidence " + Json(c).dump() + " outside [0,1]", raw_text);
            }
            response.confidence = c;
            break;
        }
        case SchemaId::comparison: {
            const auto it = payload.find("choice");
            if (it == payload.end() || !it->is_string()) {
                throw ParseError("completion missing 'choice'", raw_text);
            }
            const std::string choice = it->get<std::string>();
            if (choice != "Q1" && choice != "Q2") {
                throw ParseError("choice must be 'Q1' or 'Q2', got '" + choice + "'",
                                 raw_text);
            }
            response.choice = choice == "Q1" ? PairChoice::Q1 : PairChoice::Q2;
            response.answers = {require_answer_string(payload, "answer_q1", raw_text),
                                require_answer_string(payload, "answer_q2", raw_text)};
            break;
        }
        case SchemaId::equivalence_judge: {
            const auto it = payload.find("equivalent");
            if (it == payload.end() || !it->is_boolean()) {
                throw ParseError("completion missing boolean 'equivalent'", raw_text);
            }
            response.equivalent = it->get<bool>();
            break;
        }
    }
    return response;
}

CompletionCache::CompletionCache(std::optional<std::filesystem::path> path)
    : path_(std::move(path)) {
    if (!path_) return;
    if (std::filesystem::exists(*path_)) {
        for (const Json& entry : read_jsonl(*path_)) {
            if (!entry.contains("key") || !entry.contains("raw")) {
                throw DependencyError("completion cache entry missing key/raw in " +
                                      path_->string());
            }
            entries_[entry.at("key").get<std::string>()] = entry.at("raw").get<std::string>();
        }
    } else if (path_->has_parent_path()) {
        std::filesystem::create_directories(path_->parent_path());
    }
}

std::string CompletionCache::key_of(const CompletionRequest& request) {
    std::string material = request.backend_id;
    material += kFieldSep;
    material += request.prompt.digest();
    material += kFieldSep;
    material += Json(request.temperature).dump();
    material += kFieldSep;
    material += std::to_string(request.sample_index);
    return sha256_hex(material);
}

std::optional<std::string> CompletionCache::get(const std::string& key) const {
    std::lock_guard<std::mutex> lock(mutex_);
    const auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

void CompletionCache::put(const std::string& key, const std::string& raw) {
    std::lock_guard<std::mutex> lock(mutex_);
    if (!entries_.emplace(key, raw).second) return;
    if (!path_) return;
    std::ofstream out(*path_, std::ios::binary | std::ios::app);
    if (!out) throw DependencyError("cannot append to completion cache " + path_->string());
    out << to_jsonl_line(Json{{"key", key}, {"raw", raw}}) << '\n';
}

std::size_t CompletionCache::size() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return entries_.size();
}

AuditLog::AuditLog(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, std::ios::binary | std::ios::app);
    if (!out_) throw DependencyError("cannot open audit log " + path.string());
}

void AuditLog::append(const Json& entry) {
    std::lock_guard<std::mutex> lock(mutex_);
    out_ << to_jsonl_line(entry) << '\n';
    out_.flush();
}

std::string redact(std::string text, const std::string& secret) {
    if (secret.empty()) return text;
    std::size_t pos = 0;
    while ((pos = text.find(secret, pos)) != std::string::npos) {
        text.replace(pos, secret.size(), "***");
        pos += 3;
    }
    return text;
}

Gateway::Gateway(std::shared_ptr<Backend> backend, GatewayOptions options)
    : backend_(std::move(backend)), options_(std::move(options)),
      cache_(options_.cache_path) {
    if (!backend_) throw ConfigError("gateway needs a backend");
    if (options_.max_parse_attempts < 1) {
        throw ConfigError("max_parse_attempts must be >= 1");
    }
    if (options_.audit_path) audit_ = std::make_unique<AuditLog>(*options_.audit_path);
}

ParsedResponse Gateway::complete(const CompletionRequest& request) {
    CompletionRequest keyed = request;
    keyed.backend_id = backend_->id();
    const std::string key = CompletionCache::key_of(keyed);

    if (const auto cached = cache_.get(key)) {
        try {
            return parse_completion(*cached, keyed.schema_id);
        } catch (const ParseError&) {
            throw DependencyError("cached completion no longer parses for key " + key);
        }
    }

    std::string last_error;
    std::string last_raw;
    for (int attempt = 1; attempt <= options_.max_parse_attempts; ++attempt) {
        const std::string raw = backend_->complete_raw(keyed);
        last_raw = raw;
        Json audit_entry{{"backend", backend_->id()},
                         {"task", to_string(keyed.prompt.task)},
                         {"question_ids", keyed.prompt.question_ids},
                         {"temperature", keyed.temperature},
                         {"sample_index", keyed.sample_index},
                         {"prompt_sha256", keyed.prompt.digest()},
                         {"attempt", attempt},
                         {"response", raw}};
        try {
            ParsedResponse parsed = parse_completion(raw, keyed.schema_id);
            if (audit_) {
                audit_entry["ok"] = true;
                audit_->append(audit_entry);
            }
            cache_.put(key, raw);
            return parsed;
        } catch (const ParseError& e) {
            last_error = e.what();
            if (audit_) {
                audit_entry["ok"] = false;
                audit_entry["error"] = last_error;
                audit_->append(audit_entry);
            }
        }
    }
    throw ParseError("schema violation after " + std::to_string(options_.max_parse_attempts) +
                         " attempts: " + last_error,
                     last_raw);
}

}  // namespace metacal
