#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "metacal/jsonl.hpp"

namespace metacal {

enum class AnswerFormat { multiple_choice, numeric, short_answer };

const char* to_string(AnswerFormat format);
AnswerFormat answer_format_from_string(const std::string& name);

struct Option {
    std::string letter;
    std::string text;

    bool operator==(const Option&) const = default;
};

struct Question {
    std::string id;
    std::string domain_tag;
    AnswerFormat answer_format = AnswerFormat::short_answer;
    std::string text;
    // Present iff answer_format == multiple_choice.
    std::vector<Option> options;
    std::string gold;

    bool operator==(const Question&) const = default;
};

// Throws CorpusError naming the offending field if an invariant fails:
// multiple_choice needs >= 2 options with distinct letters and gold equal to
// one of them; numeric needs an integer gold; options are rejected for
// non-multiple-choice formats.
void validate_question(const Question& question);

Json question_to_json(const Question& question);
Question question_from_json(const Json& record);

struct CorpusManifest {
    std::string source;
    std::string loaded_at;  // provenance only; never serialized into artifacts
    std::string digest;     // sha256 of the canonical JSONL serialization
};

struct QuestionSet {
    std::vector<Question> questions;
    CorpusManifest manifest;

    std::size_t size() const { return questions.size(); }
    const Question* find(const std::string& id) const;
    const Question& require(const std::string& id) const;
};

// Builds a set from already-validated questions, recomputing the digest.
QuestionSet make_question_set(std::vector<Question> questions, std::string source);

// Canonical serialization: question_to_json per line, LF endings. The
// manifest digest is the sha256 of exactly this string.
std::string corpus_to_jsonl(const QuestionSet& set);

enum class FormatHint { any, multiple_choice, numeric, short_answer };

// Loads corpus JSONL (one record per line per the schema in corpus.cpp).
// Errors carry the 1-based line number and the violated field. A non-any
// hint additionally requires every record to carry that format.
QuestionSet load_corpus(const std::filesystem::path& path, FormatHint hint = FormatHint::any);

void save_corpus(const QuestionSet& set, const std::filesystem::path& path);

struct CorpusSplit {
    QuestionSet train;
    QuestionSet test;
    std::uint64_t seed = 0;
};

// Uniform random disjoint subsets of exact sizes; question order inside each
// subset follows source order. Identical seeds reproduce identical splits.
CorpusSplit split_corpus(const QuestionSet& set, std::size_t train_n, std::size_t test_n,
                         std::uint64_t seed);

// Split manifest: {"seed": int, "train_ids": [...], "test_ids": [...]}.
Json split_manifest(const CorpusSplit& split);
CorpusSplit apply_split_manifest(const QuestionSet& set, const Json& manifest);

}  // namespace metacal
