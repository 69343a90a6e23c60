#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "did3/common.hpp"

namespace did3 {

// Line-based `key = value` file with `[section]` headers. '#' starts a
// comment. Keys are addressed as "section.key"; unknown keys fail fast.
class ConfigFile {
 public:
  ConfigFile() = default;

  static ConfigFile parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_string(ss.str(), path);
  }

  static ConfigFile parse_string(const std::string& text,
                                 const std::string& origin = "<string>") {
    ConfigFile cfg;
    std::istringstream in(text);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      if (trimmed.front() == '[') {
        if (trimmed.back() != ']')
          throw FormatError(origin + ":" + std::to_string(lineno) +
                            ": malformed section header '" + trimmed + "'");
        section = trim(trimmed.substr(1, trimmed.size() - 2));
        if (section.empty())
          throw FormatError(origin + ":" + std::to_string(lineno) +
                            ": empty section name");
        continue;
      }
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw FormatError(origin + ":" + std::to_string(lineno) +
                          ": expected 'key = value', got '" + trimmed + "'");
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty())
        throw FormatError(origin + ":" + std::to_string(lineno) +
                          ": empty key");
      const std::string full = section.empty() ? key : section + "." + key;
      if (cfg.values_.count(full))
        throw FormatError(origin + ":" + std::to_string(lineno) +
                          ": duplicate key '" + full + "'");
      cfg.values_[full] = value;
    }
    return cfg;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& dflt) {
    touch(key);
    auto it = values_.find(key);
    return it == values_.end() ? dflt : it->second;
  }

  double get_double(const std::string& key, double dflt) {
    touch(key);
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    try {
      std::size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': expected number, got '" +
                        it->second + "'");
    }
  }

  std::int64_t get_int(const std::string& key, std::int64_t dflt) {
    touch(key);
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    try {
      std::size_t pos = 0;
      const std::int64_t v = std::stoll(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': expected integer, got '" +
                        it->second + "'");
    }
  }

  bool get_bool(const std::string& key, bool dflt) {
    touch(key);
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" +
                      it->second + "'");
  }

  std::vector<std::int64_t> get_int_list(const std::string& key,
                                         std::vector<std::int64_t> dflt) {
    touch(key);
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    std::vector<std::int64_t> out;
    std::istringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        out.push_back(std::stoll(trim(item)));
      } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': bad integer list '" +
                          it->second + "'");
      }
    }
    return out;
  }

  // Fail-fast on typos: every present key must have been consumed by one of
  // the getters above.
  void reject_unknown_keys() const {
    for (const auto& [key, value] : values_)
      if (!touched_.count(key))
        throw ConfigError("config: unknown key '" + key + "'");
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  void touch(const std::string& key) { touched_.insert(key); }

  std::map<std::string, std::string> values_;
  std::set<std::string> touched_;
};

}  // namespace did3
