#pragma once

// Plain-text `key = value` configuration files. Lines starting with '#' are
// comments; keys may repeat (e.g. one `anomaly` line per segment).

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace tbigan {

class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text);
  static KeyValueConfig load(const std::string& path);

  bool contains(const std::string& key) const;
  std::optional<std::string> get(const std::string& key) const;
  std::vector<std::string> get_all(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) const;

  void set(const std::string& key, const std::string& value);
  void add(const std::string& key, const std::string& value);

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
  std::string to_string() const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

// Shortest round-trip text for a double.
std::string format_double(double v);
double parse_double(const std::string& text, const std::string& what);

}  // namespace tbigan
