#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace srlab {

/// Throws Io when the file cannot be read; the message names the path.
std::string read_text_file(const std::filesystem::path& path);

/// Writes `path.tmp` and renames it over `path`. Creates parent directories.
void write_text_atomic(const std::filesystem::path& path, std::string_view content);

/// Lowercase hex SHA-256 of the bytes.
std::string sha256_hex(std::string_view bytes);

/// Shortest decimal string that parses back to the identical double.
std::string format_double(double value);
/// Throws ParseError on malformed input.
double parse_double(std::string_view text);

/// RFC 4180 field quoting: fields containing a comma, quote, CR or LF are
/// wrapped in quotes with inner quotes doubled.
std::string csv_field(std::string_view field);
/// Header plus rows, CRLF line endings.
std::string to_csv(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows);
/// Parses RFC 4180 text into records (header included). Throws ParseError.
std::vector<std::vector<std::string>> parse_csv(std::string_view text);

}  // namespace srlab
