#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "mamforge/error.hpp"
#include "mamforge/format.hpp"
#include "mamforge/xyz.hpp"

namespace mamforge {

/// Flat key=value settings. Values from the command line override values
/// from a file; accessors supply the defaults and remember what was used.
class Config {
 public:
  static Config parse(std::string_view text) {
    Config c;
    std::size_t line_no = 0;
    for (const auto& raw : split_lines(text)) {
      ++line_no;
      std::string line = raw;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      line = xyz_detail::trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
      const std::string key = xyz_detail::trim(std::string_view(line).substr(0, eq));
      const std::string value = xyz_detail::trim(std::string_view(line).substr(eq + 1));
      if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
      if (c.values_.count(key)) throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key " + key);
      c.values_[key] = value;
    }
    return c;
  }

  static Config load(const std::string& path) {
    try {
      return parse(read_text_file(path));
    } catch (const DataError& e) {
      throw ConfigError(e.what());
    }
  }

  /// Applies a "key=value" override.
  void set(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + assignment);
    values_[xyz_detail::trim(std::string_view(assignment).substr(0, eq))] =
        xyz_detail::trim(std::string_view(assignment).substr(eq + 1));
  }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  /// Throws unless every key is listed or starts with one of the prefixes.
  void check_known(const std::set<std::string>& keys, const std::vector<std::string>& prefixes = {}) const {
    for (const auto& [k, v] : values_) {
      if (keys.count(k)) continue;
      bool ok = false;
      for (const auto& p : prefixes) ok = ok || k.rfind(p, 0) == 0;
      if (!ok) throw ConfigError("unknown config key: " + k);
    }
  }

  std::vector<std::string> keys_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
      if (k.rfind(prefix, 0) == 0) out.push_back(k);
    return out;
  }

  std::string get_string(const std::string& key, const std::string& fallback) {
    const auto it = values_.find(key);
    const std::string v = it == values_.end() ? fallback : it->second;
    resolved_[key] = v;
    return v;
  }

  double get_double(const std::string& key, double fallback) {
    const auto it = values_.find(key);
    const double v = it == values_.end() ? fallback : to_number(key, it->second);
    resolved_[key] = format_number(v);
    return v;
  }

  std::optional<double> get_optional_double(const std::string& key) {
    const auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    const double v = to_number(key, it->second);
    resolved_[key] = format_number(v);
    return v;
  }

  long long get_int(const std::string& key, long long fallback) {
    const auto it = values_.find(key);
    long long v = fallback;
    if (it != values_.end()) {
      std::size_t pos = 0;
      try {
        v = std::stoll(it->second, &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos == 0 || pos != it->second.size()) throw ConfigError("config key " + key + " expects an integer, got '" + it->second + "'");
    }
    resolved_[key] = std::to_string(v);
    return v;
  }

  std::uint64_t get_seed(const std::string& key, std::uint64_t fallback) {
    const auto it = values_.find(key);
    std::uint64_t v = fallback;
    if (it != values_.end()) {
      std::size_t pos = 0;
      try {
        if (!it->second.empty() && it->second[0] != '-') v = std::stoull(it->second, &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos == 0 || pos != it->second.size()) throw ConfigError("config key " + key + " expects a non-negative integer");
    }
    resolved_[key] = std::to_string(v);
    return v;
  }

  bool get_bool(const std::string& key, bool fallback) {
    const auto it = values_.find(key);
    bool v = fallback;
    if (it != values_.end()) {
      const auto s = xyz_detail::lower(it->second);
      if (s == "true" || s == "1" || s == "yes" || s == "on") v = true;
      else if (s == "false" || s == "0" || s == "no" || s == "off") v = false;
      else throw ConfigError("config key " + key + " expects a boolean, got '" + it->second + "'");
    }
    resolved_[key] = v ? "true" : "false";
    return v;
  }

  /// Every key read so far with the value that took effect.
  const std::map<std::string, std::string>& resolved() const { return resolved_; }

 private:
  static double to_number(const std::string& key, const std::string& s) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != s.size()) throw ConfigError("config key " + key + " expects a number, got '" + s + "'");
    return v;
  }

  std::map<std::string, std::string> values_;
  std::map<std::string, std::string> resolved_;
};

}  // namespace mamforge
