#pragma once

// Structured-text configuration: [section] headers, key = value lines,
// '#' comments. Unknown keys are preserved; typed getters supply defaults.

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

namespace pcs {

class Config {
 public:
  Config() = default;

  static Config from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_text(ss.str());
  }

  static Config from_text(const std::string& text) {
    Config cfg;
    cfg.merge_text(text);
    return cfg;
  }

  void merge_text(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::string section;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      std::string s = strip(line);
      if (s.empty() || s[0] == '#') continue;
      if (s.front() == '[') {
        if (s.back() != ']') throw std::runtime_error("config: bad section at line " + std::to_string(line_no));
        section = strip(s.substr(1, s.size() - 2));
        continue;
      }
      auto eq = s.find('=');
      if (eq == std::string::npos) throw std::runtime_error("config: missing '=' at line " + std::to_string(line_no));
      std::string key = strip(s.substr(0, eq));
      std::string val = strip(s.substr(eq + 1));
      if (key.empty()) throw std::runtime_error("config: empty key at line " + std::to_string(line_no));
      sections_[section][key] = val;
    }
  }

  // Later files override earlier values.
  void merge_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    merge_text(ss.str());
  }

  bool has(const std::string& section, const std::string& key) const {
    auto s = sections_.find(section);
    return s != sections_.end() && s->second.count(key) > 0;
  }

  std::string get_str(const std::string& section, const std::string& key, const std::string& def) const {
    auto s = sections_.find(section);
    if (s == sections_.end()) return def;
    auto k = s->second.find(key);
    return k == s->second.end() ? def : k->second;
  }

  double get_double(const std::string& section, const std::string& key, double def) const {
    if (!has(section, key)) return def;
    const std::string v = get_str(section, key, "");
    try {
      return std::stod(v);
    } catch (const std::exception&) {
      throw std::runtime_error("config: bad number for " + section + "." + key + ": '" + v + "'");
    }
  }

  int get_int(const std::string& section, const std::string& key, int def) const {
    if (!has(section, key)) return def;
    const std::string v = get_str(section, key, "");
    try {
      return std::stoi(v);
    } catch (const std::exception&) {
      throw std::runtime_error("config: bad integer for " + section + "." + key + ": '" + v + "'");
    }
  }

  bool get_bool(const std::string& section, const std::string& key, bool def) const {
    if (!has(section, key)) return def;
    std::string v = get_str(section, key, "");
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw std::runtime_error("config: bad boolean for " + section + "." + key + ": '" + v + "'");
  }

  void set(const std::string& section, const std::string& key, const std::string& val) {
    sections_[section][key] = val;
  }

 private:
  static std::string strip(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::map<std::string, std::string>> sections_;
};

}  // namespace pcs
