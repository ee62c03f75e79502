#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace metacal {

// SHA-256 of the given bytes as a lowercase hex string.
std::string sha256_hex(std::string_view bytes);

// SHA-256 of a file's contents; throws DependencyError if unreadable.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace metacal
