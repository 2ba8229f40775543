#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>

namespace qdq {

// Flat key=value run configuration shared by every pipeline stage.
//
// File grammar, one setting per line:
//   key = value        # trailing comment
// '#' comments out the rest of a line; blank lines are skipped; whitespace
// around key and value is trimmed. Keys must be declared (with a default)
// before parsing, so unknown keys and in-file duplicates are hard errors
// instead of silent typos. Flag overrides go through set() after the file.
class RunConfig {
 public:
  // registers a key and its default value; re-declaring a key throws
  void declare(const std::string& key, const std::string& def);

  // replaces a declared key's default without marking it explicit; lets env
  // presets fill values that any file/flag setting still wins over
  void default_override(const std::string& key, const std::string& value);

  void load_file(const std::string& path);
  void set(const std::string& key, const std::string& value);
  void set_pair(const std::string& pair);  // "key=value" from a command line

  bool declared(const std::string& key) const;
  bool is_explicit(const std::string& key) const;

  const std::string& raw(const std::string& key) const;
  double f64(const std::string& key) const;
  long i64(const std::string& key) const;
  int i32(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  std::string str(const std::string& key) const;

  // sorted "key = value" lines: the resolved snapshot embedded in artifacts,
  // itself parseable under the file grammar
  std::string echo() const;

 private:
  const std::string& require(const std::string& key) const;

  std::map<std::string, std::string> vals_;
  std::set<std::string> explicit_;
};

}  // namespace qdq
