#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "metacal/corpus.hpp"
#include "metacal/jsonl.hpp"
#include "metacal/metrics.hpp"

namespace metacal {

enum class TaskKind { single_question, comparison, equivalence_judge };

const char* to_string(TaskKind task);

struct PromptInstance {
    TaskKind task = TaskKind::single_question;
    std::optional<std::string> system_text;
    std::string user_text;
    // 1 id for single_question and equivalence_judge, 2 distinct ids for
    // comparison.
    std::vector<std::string> question_ids;

    std::string digest() const;
};

// System message used for every single-question confidence prompt.
extern const char* const kSingleQuestionSystemText;

PromptInstance render_single_prompt(const Question& question);
PromptInstance render_comparison_prompt(const Question& q1, const Question& q2);
// Asks whether two answers to the same question mean the same thing; the
// response schema is a single boolean.
PromptInstance render_equivalence_prompt(const Question& question, const std::string& answer_a,
                                         const std::string& answer_b);

enum class SchemaId { single_question, comparison, equivalence_judge };

const char* to_string(SchemaId schema);
SchemaId schema_for(TaskKind task);

struct CompletionRequest {
    PromptInstance prompt;
    double temperature = 0.0;
    int sample_index = 0;
    SchemaId schema_id = SchemaId::single_question;
    std::string backend_id;
};

struct ParsedResponse {
    std::vector<std::string> answers;       // 1 or 2 entries, by task
    std::optional<double> confidence;       // single_question
    std::optional<PairChoice> choice;       // comparison
    std::optional<bool> equivalent;         // equivalence_judge
    std::string raw_text;
};

// Validates a raw completion payload against the schema and lifts it into a
// typed response. Throws ParseError (carrying the raw text) on any shape,
// type, or range violation.
ParsedResponse parse_completion(const std::string& raw_text, SchemaId schema);

class Backend {
public:
    virtual ~Backend() = default;
    virtual const std::string& id() const = 0;
    // Returns the raw completion payload for one request. Expected to
    // handle transport-level retries itself and throw TransportError once
    // they are exhausted.
    virtual std::string complete_raw(const CompletionRequest& request) = 0;
};

// Persistent completion store keyed by (backend, prompt digest, temperature,
// sample_index). Safe for concurrent use; duplicate puts of the same key
// carry identical values by construction, so last-writer-wins is harmless.
class CompletionCache {
public:
    // Memory-only when no path is given; otherwise loads existing entries
    // and appends new ones to the file.
    explicit CompletionCache(std::optional<std::filesystem::path> path = std::nullopt);

    static std::string key_of(const CompletionRequest& request);

    std::optional<std::string> get(const std::string& key) const;
    void put(const std::string& key, const std::string& raw);
    std::size_t size() const;

private:
    mutable std::mutex mutex_;
    std::unordered_map<std::string, std::string> entries_;
    std::optional<std::filesystem::path> path_;
};

// Append-only JSONL log of every completion exchange for audit.
class AuditLog {
public:
    explicit AuditLog(const std::filesystem::path& path);
    void append(const Json& entry);

private:
    std::mutex mutex_;
    std::ofstream out_;
};

// Replaces every occurrence of secret in text; used so credentials never
// reach audit logs.
std::string redact(std::string text, const std::string& secret);

struct GatewayOptions {
    std::optional<std::filesystem::path> cache_path;
    std::optional<std::filesystem::path> audit_path;
    // Total completion attempts per request when the payload violates the
    // schema: the first ask plus bounded re-asks.
    int max_parse_attempts = 3;
};

// Front door for all completions: consults the cache, asks the backend,
// validates the payload, re-asks on schema violations, records the
// exchange. Thread-safe as long as the backend is.
class Gateway {
public:
    Gateway(std::shared_ptr<Backend> backend, GatewayOptions options = {});

    ParsedResponse complete(const CompletionRequest& request);

    const std::string& backend_id() const { return backend_->id(); }
    std::size_t cache_size() const { return cache_.size(); }

private:
    std::shared_ptr<Backend> backend_;
    GatewayOptions options_;
    CompletionCache cache_;
    std::unique_ptr<AuditLog> audit_;
};

}  // namespace metacal
