#include "attnct/kv.hpp"

#include <charconv>
#include <cmath>
#include <set>
#include <sstream>

#include "attnct/errors.hpp"

namespace attnct::kv {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

}  // namespace

std::vector<Line> parse_text(const std::string& text, const std::string& source) {
  std::vector<Line> out;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string raw;
  std::size_t n = 0;
  while (std::getline(in, raw)) {
    ++n;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(n) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected key=value, got `" + line + "`");
    Line l{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), n};
    if (l.key.empty()) throw ConfigError(where + "empty key");
    if (!seen.insert(l.key).second) throw ConfigError(where + "duplicate key `" + l.key + "`");
    out.push_back(std::move(l));
  }
  return out;
}

std::string format(const Entries& entries) {
  std::string out;
  for (const auto& [k, v] : entries) out += k + "=" + v + "\n";
  return out;
}

std::size_t parse_size(const std::string& key, const std::string& s, bool allow_zero) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(s, &pos);
    if (pos != s.size() || v < 0 || (!allow_zero && v == 0)) throw std::invalid_argument(s);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a " + std::string(allow_zero ? "non-negative" : "positive") +
                      " integer, got `" + s + "`");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& s) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ConfigError(key + ": expected an unsigned 64-bit integer, got `" + s + "`");
  }
  return v;
}

std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& s) {
  std::vector<std::size_t> out;
  if (s.empty()) return out;
  for (const auto& item : split_commas(s)) {
    try {
      out.push_back(parse_size(key, item));
    } catch (const ConfigError&) {
      throw ConfigError(key + ": expected comma-separated positive integers, got `" + s + "`");
    }
  }
  return out;
}

double parse_double(const std::string& key, const std::string& s) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a finite number, got `" + s + "`");
  }
}

std::vector<double> parse_doubles(const std::string& key, const std::string& s) {
  std::vector<double> out;
  if (s.empty()) return out;
  for (const auto& item : split_commas(s)) out.push_back(parse_double(key, item));
  return out;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "on") return true;
  if (s == "false" || s == "0" || s == "off") return false;
  throw ConfigError(key + ": expected true or false, got `" + s + "`");
}

std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

}  // namespace attnct::kv
