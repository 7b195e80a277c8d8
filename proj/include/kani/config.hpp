#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace kani {

// Flat "key = value" file. '#' starts a comment; blank lines are ignored.
// Readers mark keys as consumed so leftovers can be reported as unknown.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& in, const std::string& source = "<config>");
  static KeyValueConfig load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;
  std::vector<std::int64_t> get_ints(const std::string& key, const std::vector<std::int64_t>& fallback) const;

  std::vector<std::string> unused_keys() const;
  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  const std::string* lookup(const std::string& key) const;

  std::string source_;
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

}  // namespace kani
