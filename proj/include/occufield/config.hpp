// SPDX-License-Identifier: Apache-2.0
//
// Plain-text configuration: `[section]` headers, `key=value` lines, `#`
// comments. CLI overrides arrive as `section.key=value`. Lookups go through
// a per-section schema; unknown keys are rejected.

#pragma once

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "occufield/tensor.hpp"

namespace occufield {

class ConfigFile {
 public:
  ConfigFile() = default;

  static ConfigFile parse(const std::string& path) {
    std::ifstream is(path);
    if (!is) fail("config: cannot open " + path);
    ConfigFile cfg;
    std::string line, section;
    int line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      const size_t hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      auto trim = [](std::string s) {
        const char* ws = " \t\r\n";
        const size_t b = s.find_first_not_of(ws);
        if (b == std::string::npos) return std::string();
        return s.substr(b, s.find_last_not_of(ws) - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[' && line.back() == ']') {
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const size_t eq = line.find('=');
      if (eq == std::string::npos)
        fail("config: line " + std::to_string(line_no) + " is not key=value: '" + line + "'");
      if (section.empty())
        fail("config: key outside any [section] at line " + std::to_string(line_no));
      cfg.values_[section + "." + trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return cfg;
  }

  // "section.key=value"
  void set_override(const std::string& assignment) {
    const size_t eq = assignment.find('=');
    const size_t dot = assignment.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq)
      fail("config: override must be section.key=value, got '" + assignment + "'");
    values_[assignment.substr(0, eq)] = assignment.substr(eq + 1);
  }

  bool has(const std::string& section, const std::string& key) const {
    return values_.count(section + "." + key) > 0;
  }
  std::string get(const std::string& section, const std::string& key,
                  const std::string& fallback) const {
    auto it = values_.find(section + "." + key);
    return it == values_.end() ? fallback : it->second;
  }
  double get_double(const std::string& s, const std::string& k, double fb) const {
    auto it = values_.find(s + "." + k);
    return it == values_.end() ? fb : std::stod(it->second);
  }
  int64_t get_int(const std::string& s, const std::string& k, int64_t fb) const {
    auto it = values_.find(s + "." + k);
    return it == values_.end() ? fb : std::stoll(it->second);
  }
  bool get_bool(const std::string& s, const std::string& k, bool fb) const {
    auto it = values_.find(s + "." + k);
    if (it == values_.end()) return fb;
    const std::string& v = it->second;
    if (v == "1" || v == "true" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "no") return false;
    fail("config: boolean expected for " + s + "." + k + ", got '" + v + "'");
  }
  std::vector<int> get_int_list(const std::string& s, const std::string& k,
                                std::vector<int> fb) const {
    auto it = values_.find(s + "." + k);
    if (it == values_.end()) return fb;
    std::vector<int> out;
    std::istringstream ls(it->second);
    std::string tok;
    while (std::getline(ls, tok, ',')) out.push_back(std::stoi(tok));
    return out;
  }

  // Rejects keys outside the schema (section -> allowed key names).
  void validate(const std::map<std::string, std::set<std::string>>& schema) const {
    for (const auto& [dotted, value] : values_) {
      (void)value;
      const size_t dot = dotted.find('.');
      const std::string section = dotted.substr(0, dot);
      const std::string key = dotted.substr(dot + 1);
      auto it = schema.find(section);
      if (it == schema.end()) fail("config: unknown section [" + section + "]");
      if (!it->second.count(key))
        fail("config: unknown key '" + key + "' in section [" + section + "]");
    }
  }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace occufield
