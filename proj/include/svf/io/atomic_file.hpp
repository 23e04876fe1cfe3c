#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace svf::io {

// Writes to a sibling temp file and renames it over `path`, so readers see
// either the old file, the complete new one, or nothing.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

}  // namespace svf::io
