#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace kgd {

/// Insertion-ordered JSON; every artifact this project writes goes through it
/// so that key order (and therefore bytes) is fixed by construction order.
using Json = nlohmann::ordered_json;

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string sha256_hex(std::string_view data);

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
bool icontains(std::string_view haystack, std::string_view needle);
bool istarts_with(std::string_view s, std::string_view prefix);

/// Splits on '\n', dropping a trailing '\r' from each line.
std::vector<std::string> split_lines(std::string_view text);

/// Compact, deterministic JSON text (UTF-8 kept as-is, invalid bytes replaced).
std::string dump_compact(const Json& j);
/// Two-space indented JSON text.
std::string dump_pretty(const Json& j);

std::string read_file(const std::filesystem::path& path);

/// Write to a sibling temp file, fsync, then rename over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

/// Append `line` plus '\n' and fsync before returning.
void append_line_durable(const std::filesystem::path& path, std::string_view line);

/// UTC timestamp, ISO-8601. Honors SOURCE_DATE_EPOCH when set.
std::string utc_timestamp_now();

}  // namespace kgd
