#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

namespace repairlab {

using Json = nlohmann::json;

// Calls fn(record, line_number) for every non-blank line. Line numbers are
// 1-based. A line that is not valid JSON raises LineParseError.
void read_jsonl(const std::filesystem::path& path,
                const std::function<void(const Json&, std::size_t)>& fn);

void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& records);
void append_jsonl(const std::filesystem::path& path, const Json& record);

// Writes through a sibling temp file and renames, so readers never see a
// half-written file.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

// Serializes with invalid UTF-8 replaced by U+FFFD, so sampled byte strings
// never make a write fail.
std::string dump_json(const Json& j, int indent = -1);

// Lowercase hex SHA-256 of the bytes.
std::string sha256_hex(std::string_view bytes);

}  // namespace repairlab
