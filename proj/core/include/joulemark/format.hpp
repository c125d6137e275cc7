#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

// Small text helpers shared by the CSV/JSON writers. Output of these
// functions is part of the on-disk format, so it must stay stable.
namespace joulemark::fmtutil {

/// Shortest decimal representation that round-trips to the same double.
std::string format_double(double value);

/// Empty string for an absent value, otherwise format_double().
std::string format_optional(const std::optional<double>& value);

/// Parses a full string as a double; nullopt on any trailing garbage.
std::optional<double> parse_double(std::string_view text);
std::optional<std::int64_t> parse_int64(std::string_view text);
std::optional<std::uint64_t> parse_uint64(std::string_view text);

std::vector<std::string> split(std::string_view text, char sep);
std::string_view trim(std::string_view text);

/// 64-bit FNV-1a, rendered as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view data);

std::string read_file(const std::filesystem::path& path);
/// Writes atomically enough for our purposes: temp file + rename.
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace joulemark::fmtutil
