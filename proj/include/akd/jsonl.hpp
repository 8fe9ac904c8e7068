#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace akd {

// Writes to a sibling temp file and renames it over `path`, so readers never
// observe a half-written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

std::string read_file(const std::filesystem::path& path);

void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& rows);

// Blank lines are skipped. Throws StateError naming the file and line on
// malformed JSON.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

}  // namespace akd
