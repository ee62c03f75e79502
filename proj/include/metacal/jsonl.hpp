#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace metacal {

using Json = nlohmann::json;

// Serializes one JSON value per line with sorted object keys and no added
// whitespace. Sorted keys plus shortest-round-trip float printing are what
// make artifacts byte-identical across runs, so all on-disk JSON goes
// through these helpers.
std::string to_jsonl_line(const Json& value);

// Reads every line of a JSONL file. Blank lines are rejected: artifacts are
// written without them, so one in the input means truncation or hand edits.
// Parse failures report the 1-based line number via the caller's context
// string (typically the file path).
std::vector<Json> read_jsonl(const std::filesystem::path& path);

// Streaming variant for large files; invokes fn(line_number, value).
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(std::size_t, const Json&)>& fn);

// Writes records as JSONL, one per line, trailing newline after the last.
void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& records);

// Parses a full JSON document from a file (config files, manifests).
Json read_json_file(const std::filesystem::path& path);

// Pretty-prints a JSON document (sorted keys, 2-space indent, trailing
// newline). Used for single-document artifacts like metric reports.
void write_json_file(const std::filesystem::path& path, const Json& value);

}  // namespace metacal
