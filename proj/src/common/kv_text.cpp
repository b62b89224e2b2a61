#include "trackgpt/kv_text.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>

#include "trackgpt/error.hpp"

namespace trackgpt {

std::string_view error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::Input: return "E_INPUT";
    case ErrorCode::Config: return "E_CONFIG";
    case ErrorCode::Coverage: return "E_COVERAGE";
    case ErrorCode::Data: return "E_DATA";
    case ErrorCode::Parse: return "E_PARSE";
    case ErrorCode::Numeric: return "E_NUMERIC";
    case ErrorCode::Io: return "E_IO";
  }
  return "E_UNKNOWN";
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(s.substr(start));
      return out;
    }
    out.emplace_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

KvRecord KvRecord::parse(std::string_view text) {
  KvRecord rec;
  std::string section;
  int line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw Error(ErrorCode::Parse, "line " + std::to_string(line_no) + ": unterminated section");
      }
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::Parse, "line " + std::to_string(line_no) + ": expected key = value");
    }
    std::string key = trim(std::string_view(line).substr(0, eq));
    if (key.empty()) throw Error(ErrorCode::Parse, "line " + std::to_string(line_no) + ": empty key");
    if (!section.empty()) key = section + "." + key;
    rec.values_[key] = trim(std::string_view(line).substr(eq + 1));
  }
  return rec;
}

const std::string& KvRecord::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw Error(ErrorCode::Parse, "missing key '" + key + "'");
  return it->second;
}

std::string KvRecord::get_or(const std::string& key, const std::string& fallback) const {
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double KvRecord::get_double(const std::string& key) const {
  const std::string& v = get(key);
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) {
    throw Error(ErrorCode::Parse, "key '" + key + "': not a number: " + v);
  }
  return d;
}

double KvRecord::get_double_or(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

long long KvRecord::get_int(const std::string& key) const {
  const std::string& v = get(key);
  long long out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) {
    throw Error(ErrorCode::Parse, "key '" + key + "': not an integer: " + v);
  }
  return out;
}

long long KvRecord::get_int_or(const std::string& key, long long fallback) const {
  return has(key) ? get_int(key) : fallback;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace trackgpt
