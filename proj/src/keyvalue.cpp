#include "tbigan/keyvalue.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "tbigan/errors.hpp"

namespace tbigan {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, ptr);
}

double parse_double(const std::string& text, const std::string& what) {
  const std::string t = trim(text);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size()) {
    throw ConfigError("expected a number for " + what + ", got '" + text + "'");
  }
  return v;
}

KeyValueConfig KeyValueConfig::parse(const std::string& text) {
  KeyValueConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    cfg.entries_.emplace_back(std::move(key), trim(line.substr(eq + 1)));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

bool KeyValueConfig::contains(const std::string& key) const { return get(key).has_value(); }

std::optional<std::string> KeyValueConfig::get(const std::string& key) const {
  std::optional<std::string> found;
  for (const auto& [k, v] : entries_) {
    if (k == key) found = v;
  }
  return found;
}

std::vector<std::string> KeyValueConfig::get_all(const std::string& key) const {
  std::vector<std::string> out;
  for (const auto& [k, v] : entries_) {
    if (k == key) out.push_back(v);
  }
  return out;
}

std::string KeyValueConfig::get_string(const std::string& key,
                                       const std::string& fallback) const {
  return get(key).value_or(fallback);
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  auto v = get(key);
  return v ? parse_double(*v, key) : fallback;
}

long long KeyValueConfig::get_int(const std::string& key, long long fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  long long out = 0;
  auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc() || ptr != v->data() + v->size()) {
    throw ConfigError("expected an integer for " + key + ", got '" + *v + "'");
  }
  return out;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  std::string s = *v;
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "1" || s == "true" || s == "on" || s == "yes") return true;
  if (s == "0" || s == "false" || s == "off" || s == "no") return false;
  throw ConfigError("expected a boolean for " + key + ", got '" + *v + "'");
}

std::vector<double> KeyValueConfig::get_doubles(const std::string& key,
                                                std::vector<double> fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  std::vector<double> out;
  std::string token;
  std::istringstream in(*v);
  while (in >> token) {
    if (token.back() == ',') token.pop_back();
    if (!token.empty()) out.push_back(parse_double(token, key));
  }
  return out;
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  std::erase_if(entries_, [&](const auto& e) { return e.first == key; });
  entries_.emplace_back(key, value);
}

void KeyValueConfig::add(const std::string& key, const std::string& value) {
  entries_.emplace_back(key, value);
}

std::string KeyValueConfig::to_string() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
  return out;
}

}  // namespace tbigan
