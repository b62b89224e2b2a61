#pragma once

// Minimal "key = value" text records with optional [section] headers.

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace trackgpt {

std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

class KvRecord {
 public:
  /// Keys inside a section are stored as "section.key".
  static KvRecord parse(std::string_view text);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double_or(const std::string& key, double fallback) const;
  long long get_int(const std::string& key) const;
  long long get_int_or(const std::string& key, long long fallback) const;

  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// Shortest decimal form that round-trips a double exactly.
std::string format_double(double v);

}  // namespace trackgpt
