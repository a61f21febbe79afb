#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace bgrto::io {

/// Writes `bytes` to `path` through a sibling temporary file and rename, so
/// readers never observe a partial file. Throws IoError.
void atomic_write(const std::filesystem::path& path, const std::string& bytes);

/// Whole-file read. Throws IoError if the file cannot be opened.
std::string read_file(const std::filesystem::path& path);

/// Lowercase 16-digit hex.
std::string hex64(std::uint64_t value);

}  // namespace bgrto::io
