#include "qdq/config.hpp"

#include <cerrno>
#include <cstdlib>
#include <string>

#include "qdq/errors.hpp"
#include "qdq/io.hpp"

namespace qdq {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void RunConfig::declare(const std::string& key, const std::string& def) {
  if (!vals_.emplace(key, def).second)
    throw ConfigError("config key '" + key + "' declared twice");
}

void RunConfig::default_override(const std::string& key, const std::string& value) {
  auto it = vals_.find(key);
  if (it == vals_.end())
    throw ConfigError("unknown config key '" + key + "'");
  if (!explicit_.count(key)) it->second = value;
}

void RunConfig::load_file(const std::string& path) {
  const std::vector<unsigned char> raw = slurp_file(path);
  const std::string text(raw.begin(), raw.end());
  std::set<std::string> seen;
  std::size_t pos = 0;
  int lineno = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string line = text.substr(pos, nl == std::string::npos ? nl : nl - pos);
    pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
    if (!vals_.count(key))
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": unknown config key '" + key + "'");
    if (!seen.insert(key).second)
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": duplicate config key '" + key + "'");
    vals_[key] = value;
    explicit_.insert(key);
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = vals_.find(key);
  if (it == vals_.end())
    throw ConfigError("unknown config key '" + key + "'");
  it->second = trim(value);
  explicit_.insert(key);
}

void RunConfig::set_pair(const std::string& pair) {
  const std::size_t eq = pair.find('=');
  if (eq == std::string::npos)
    throw ConfigError("expected key=value, got '" + pair + "'");
  set(trim(pair.substr(0, eq)), pair.substr(eq + 1));
}

bool RunConfig::declared(const std::string& key) const { return vals_.count(key) > 0; }

bool RunConfig::is_explicit(const std::string& key) const {
  return explicit_.count(key) > 0;
}

const std::string& RunConfig::require(const std::string& key) const {
  auto it = vals_.find(key);
  if (it == vals_.end())
    throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

const std::string& RunConfig::raw(const std::string& key) const { return require(key); }

double RunConfig::f64(const std::string& key) const {
  const std::string& v = require(key);
  errno = 0;
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE)
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  return out;
}

long RunConfig::i64(const std::string& key) const {
  const std::string& v = require(key);
  errno = 0;
  char* end = nullptr;
  const long out = std::strtol(v.c_str(), &end, 10);
  if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE)
    throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
  return out;
}

int RunConfig::i32(const std::string& key) const {
  const long v = i64(key);
  if (v < INT32_MIN || v > INT32_MAX)
    throw ConfigError("config key '" + key + "': value out of range: " + raw(key));
  return static_cast<int>(v);
}

std::uint64_t RunConfig::u64(const std::string& key) const {
  const std::string& v = require(key);
  errno = 0;
  char* end = nullptr;
  if (!v.empty() && v[0] == '-')
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" +
                      v + "'");
  const unsigned long long out = std::strtoull(v.c_str(), &end, 10);
  if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE)
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" +
                      v + "'");
  return out;
}

std::string RunConfig::str(const std::string& key) const { return require(key); }

std::string RunConfig::echo() const {
  std::string out;
  for (const auto& [k, v] : vals_) {
    out += k;
    out += " = ";
    out += v;
    out += "\n";
  }
  return out;
}

}  // namespace qdq
