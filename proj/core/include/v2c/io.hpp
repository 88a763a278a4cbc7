#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace v2c {

/// Whole file as bytes. Throws IoError if it cannot be opened.
std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

/// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view bytes);

}  // namespace v2c
