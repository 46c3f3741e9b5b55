#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace attnct::kv {

using Entries = std::vector<std::pair<std::string, std::string>>;

struct Line {
  std::string key, value;
  std::size_t line = 0;  // 1-based
};

/// Parses flat `key=value` text. Blank lines and `#` comments are skipped;
/// whitespace around keys and values is trimmed. Malformed lines and repeated
/// keys throw ConfigError naming `source:line`.
std::vector<Line> parse_text(const std::string& text, const std::string& source = "config");

/// One `key=value` line per entry.
std::string format(const Entries& entries);

// Value parsers; failures throw ConfigError naming the key.
std::size_t parse_size(const std::string& key, const std::string& s, bool allow_zero = false);
std::uint64_t parse_u64(const std::string& key, const std::string& s);
std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& s);
double parse_double(const std::string& key, const std::string& s);
std::vector<double> parse_doubles(const std::string& key, const std::string& s);
bool parse_bool(const std::string& key, const std::string& s);

/// Shortest text that reads back to the same double.
std::string format_double(double v);
std::string join_sizes(const std::vector<std::size_t>& v);

}  // namespace attnct::kv
