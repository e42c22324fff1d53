#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ahalab/util.hpp"

namespace ahalab {

std::string read_file(const std::filesystem::path& path);
std::vector<std::string> read_lines(const std::filesystem::path& path);

// writes to a sibling temp file, then renames over the target so readers
// never observe a half-written file
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

std::uint64_t hash_file(const std::filesystem::path& path);

}  // namespace ahalab
