#include "metacal/jsonl.hpp"

#include <fstream>
#include <sstream>

#include "metacal/errors.hpp"

namespace metacal {

std::string to_jsonl_line(const Json& value) {
    // nlohmann's default json keeps object keys in sorted order and prints
    // doubles with shortest-round-trip formatting, so dump() is stable.
    return value.dump();
}

std::vector<Json> read_jsonl(const std::filesystem::path& path) {
    std::vector<Json> out;
    for_each_jsonl(path, [&out](std::size_t, const Json& value) { out.push_back(value); });
    return out;
}

void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(std::size_t, const Json&)>& fn) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DependencyError("jsonl: cannot open file: " + path.string());
    }
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) {
            throw DependencyError("jsonl: blank line " + std::to_string(line_no) + " in " +
                                  path.string());
        }
        Json value = Json::parse(line, nullptr, false);
        if (value.is_discarded()) {
            throw DependencyError("jsonl: parse error at line " + std::to_string(line_no) +
                                  " in " + path.string());
        }
        fn(line_no, value);
    }
    if (in.bad()) {
        throw DependencyError("jsonl: read error on file: " + path.string());
    }
}

void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& records) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DependencyError("jsonl: cannot write file: " + path.string());
    }
    for (const Json& record : records) {
        out << to_jsonl_line(record) << '\n';
    }
    out.flush();
    if (!out) {
        throw DependencyError("jsonl: write error on file: " + path.string());
    }
}

Json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DependencyError("json: cannot open file: " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    Json value = Json::parse(buf.str(), nullptr, false);
    if (value.is_discarded()) {
        throw DependencyError("json: parse error in " + path.string());
    }
    return value;
}

void write_json_file(const std::filesystem::path& path, const Json& value) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DependencyError("json: cannot write file: " + path.string());
    }
    out << value.dump(2) << '\n';
    out.flush();
    if (!out) {
        throw DependencyError("json: write error on file: " + path.string());
    }
}

}  // namespace metacal
