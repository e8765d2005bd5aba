#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace snd {

/// Flat key-value configuration: one `key = value` per line, '#' comments.
/// Later assignments win, so defaults < file < overrides falls out of
/// apply order.
class KvConfig {
 public:
  KvConfig() = default;

  static KvConfig from_text(const std::string& text);
  static KvConfig from_file(const std::string& path);

  void set(const std::string& key, const std::string& value);
  /// Parse a single "key=value" assignment (CLI override form).
  void set_assignment(const std::string& assignment);
  void merge(const KvConfig& other);

  bool has(const std::string& key) const;
  std::string get(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  uint64_t get_u64(const std::string& key, uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;
  std::vector<int> get_ints(const std::string& key, const std::vector<int>& fallback) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }
  std::string to_text() const;

 private:
  std::map<std::string, std::string> entries_;
};

}  // namespace snd
