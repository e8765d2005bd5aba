#include "snd/kvconfig.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace snd {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      parts.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty() || !parts.empty()) parts.push_back(trim(cur));
  return parts;
}

}  // namespace

KvConfig KvConfig::from_text(const std::string& text) {
  KvConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error("config line " + std::to_string(line_no) + ": empty key");
    cfg.entries_[key] = value;
  }
  return cfg;
}

KvConfig KvConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

void KvConfig::set(const std::string& key, const std::string& value) { entries_[key] = value; }

void KvConfig::set_assignment(const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw std::runtime_error("override must look like key=value: " + assignment);
  const std::string key = trim(assignment.substr(0, eq));
  if (key.empty()) throw std::runtime_error("override has empty key: " + assignment);
  entries_[key] = trim(assignment.substr(eq + 1));
}

void KvConfig::merge(const KvConfig& other) {
  for (const auto& [k, v] : other.entries_) entries_[k] = v;
}

bool KvConfig::has(const std::string& key) const { return entries_.count(key) > 0; }

std::string KvConfig::get(const std::string& key, const std::string& fallback) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second;
}

double KvConfig::get_double(const std::string& key, double fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  size_t pos = 0;
  const double v = std::stod(it->second, &pos);
  if (pos != it->second.size())
    throw std::runtime_error("config key '" + key + "': not a number: " + it->second);
  return v;
}

int KvConfig::get_int(const std::string& key, int fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  size_t pos = 0;
  const long v = std::stol(it->second, &pos);
  if (pos != it->second.size())
    throw std::runtime_error("config key '" + key + "': not an integer: " + it->second);
  return static_cast<int>(v);
}

uint64_t KvConfig::get_u64(const std::string& key, uint64_t fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  size_t pos = 0;
  const unsigned long long v = std::stoull(it->second, &pos);
  if (pos != it->second.size())
    throw std::runtime_error("config key '" + key + "': not an integer: " + it->second);
  return static_cast<uint64_t>(v);
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  std::string v = it->second;
  std::transform(v.begin(), v.end(), v.begin(), ::tolower);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::runtime_error("config key '" + key + "': not a boolean: " + it->second);
}

std::vector<double> KvConfig::get_doubles(const std::string& key,
                                          const std::vector<double>& fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  std::vector<double> out;
  for (const auto& p : split_list(it->second)) {
    if (p.empty()) throw std::runtime_error("config key '" + key + "': empty list element");
    out.push_back(std::stod(p));
  }
  return out;
}

std::vector<int> KvConfig::get_ints(const std::string& key, const std::vector<int>& fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  std::vector<int> out;
  for (const auto& p : split_list(it->second)) {
    if (p.empty()) throw std::runtime_error("config key '" + key + "': empty list element");
    out.push_back(std::stoi(p));
  }
  return out;
}

std::string KvConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
  return out;
}

}  // namespace snd
