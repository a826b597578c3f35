#pragma once

// Shared text helpers for the line-oriented file formats.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace portraitid::text {

/// Shortest decimal form that parses back to the identical double.
std::string format_double(double v);
/// Comma-separated values, each in format_double form.
std::string format_values(std::span<const double> values);

/// Strict parse of a full token; throws ContractError on failure.
double parse_double(std::string_view token);
std::uint64_t parse_u64(std::string_view token);
std::vector<double> parse_values(std::string_view csv);

std::vector<std::string_view> split(std::string_view s, char sep);
std::string_view trim(std::string_view s);

/// 64-bit FNV-1a. Stable across platforms, used for protocol and artifact hashes.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

std::string read_file(const std::filesystem::path& path);
/// Writes bytes verbatim (binary mode, so LF stays LF).
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace portraitid::text
