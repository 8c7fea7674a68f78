#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace vc::fsutil {

/// Throws std::runtime_error when the file cannot be read.
std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file, then renames it over `path`, so readers
/// see either the old or the new content. Throws std::runtime_error.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

void write_file(const std::filesystem::path& path, std::string_view content);

/// Appends one line (a '\n' is added) with a single write(2) on an
/// O_APPEND descriptor.
void append_line(const std::filesystem::path& path, std::string_view line);

/// Seconds since the Unix epoch.
double epoch_seconds();

}  // namespace vc::fsutil
