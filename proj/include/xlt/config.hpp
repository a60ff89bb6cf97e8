#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace xlt {

// Flat key=value configuration. '#' starts a comment; whitespace around keys
// and values is trimmed. Reads mark keys as consumed so unknown keys can be
// rejected after loading.
class KeyValueConfig {
 public:
  static KeyValueConfig parse_string(const std::string& text);
  static KeyValueConfig parse_file(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  std::string get_string(const std::string& key, const std::string& fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  uint64_t get_u64(const std::string& key, uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const;
  std::vector<std::string> get_string_list(const std::string& key,
                                           const std::vector<std::string>& fallback) const;

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  // Throws naming every key that was never consumed by a getter.
  void reject_unknown_keys() const;

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> consumed_;
};

}  // namespace xlt
