#pragma once

#include <cstdint>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "invnets/common.hpp"

namespace invnets::report {

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

/// Ordered key = value configuration; plain-text, diff-able, typed access.
class Config {
 public:
  bool has(const std::string& key) const {
    for (const auto& item : items_)
      if (item.first == key) return true;
    return false;
  }

  const std::string& get(const std::string& key) const {
    for (const auto& item : items_)
      if (item.first == key) return item.second;
    throw ContractError("config: missing key '" + key + "'");
  }

  void set(const std::string& key, std::string value) {
    for (auto& item : items_)
      if (item.first == key) {
        item.second = std::move(value);
        return;
      }
    items_.emplace_back(key, std::move(value));
  }

  void set(const std::string& key, int v) { set(key, std::to_string(v)); }
  void set(const std::string& key, long v) { set(key, std::to_string(v)); }
  void set(const std::string& key, std::uint64_t v) { set(key, std::to_string(v)); }
  void set(const std::string& key, double v) { set(key, fmt(v)); }

  int get_int(const std::string& key) const { return std::stoi(get(key)); }
  double get_double(const std::string& key) const { return std::stod(get(key)); }
  std::uint64_t get_u64(const std::string& key) const { return std::stoull(get(key)); }

  std::vector<int> get_int_list(const std::string& key) const {
    std::vector<int> out;
    std::istringstream in(get(key));
    std::string tok;
    while (std::getline(in, tok, ',')) {
      if (!tok.empty()) out.push_back(std::stoi(tok));
    }
    if (out.empty()) throw ContractError("config: key '" + key + "' holds no integers");
    return out;
  }

  const std::vector<std::pair<std::string, std::string>>& items() const { return items_; }

  /// Parses "key = value" lines; '#' starts a comment. Unknown keys are
  /// rejected with the offending line number.
  static Config parse_file(const std::string& path, const std::set<std::string>& known_keys) {
    std::ifstream in(path);
    if (!in) throw ContractError("config: cannot open '" + path + "'");
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_string(buffer.str(), known_keys, path);
  }

  static Config parse_string(const std::string& text, const std::set<std::string>& known_keys,
                             const std::string& origin = "<string>") {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    auto trim = [](std::string s) {
      auto a = s.find_first_not_of(" \t");
      auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
    };
    while (std::getline(in, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      std::string stripped = trim(line);
      if (stripped.empty()) continue;
      auto eq = stripped.find('=');
      if (eq == std::string::npos)
        throw ContractError(origin + ":" + std::to_string(lineno) +
                            ": expected 'key = value', got '" + stripped + "'");
      std::string key = trim(stripped.substr(0, eq));
      std::string value = trim(stripped.substr(eq + 1));
      if (key.empty())
        throw ContractError(origin + ":" + std::to_string(lineno) + ": empty key");
      if (!known_keys.count(key))
        throw ContractError(origin + ":" + std::to_string(lineno) + ": unknown key '" + key +
                            "'");
      cfg.set(key, value);
    }
    return cfg;
  }

 private:
  std::vector<std::pair<std::string, std::string>> items_;
};

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// One experiment report. The CSV body is byte-deterministic for a fixed
/// config and seed; the generation timestamp is confined to one header line.
struct Report {
  std::string subcommand;
  Config config;
  std::uint64_t seed = 0;
  std::vector<Check> checks;
  std::vector<std::pair<std::string, std::string>> metrics;
  std::string table_csv;  // includes its own header row

  bool all_passed() const {
    for (const auto& c : checks)
      if (!c.passed) return false;
    return true;
  }

  void add_check(const std::string& name, bool passed, const std::string& detail = "") {
    checks.push_back({name, passed, detail});
  }

  void add_metric(const std::string& name, double value) { metrics.emplace_back(name, fmt(value)); }
  void add_metric(const std::string& name, const std::string& value) {
    metrics.emplace_back(name, value);
  }

  /// Everything below the timestamp line.
  std::string csv_body() const {
    std::ostringstream out;
    out << "# seed: " << seed << "\n";
    for (const auto& item : config.items())
      out << "# config: " << item.first << " = " << item.second << "\n";
    for (const auto& c : checks)
      out << "# check: " << c.name << " = " << (c.passed ? "pass" : "fail")
          << (c.detail.empty() ? "" : " (" + c.detail + ")") << "\n";
    for (const auto& m : metrics) out << "# metric: " << m.first << " = " << m.second << "\n";
    out << table_csv;
    return out.str();
  }

  std::string csv_text() const {
    std::ostringstream out;
    out << "# invnets " << kVersion << " report: " << subcommand << "\n";
    out << "# generated_at: " << timestamp() << "\n";
    out << csv_body();
    return out.str();
  }

  std::string json_text() const {
    nlohmann::ordered_json j;
    j["artifact"] = "invnets";
    j["version"] = kVersion;
    j["subcommand"] = subcommand;
    j["seed"] = seed;
    nlohmann::ordered_json jc = nlohmann::ordered_json::object();
    for (const auto& item : config.items()) jc[item.first] = item.second;
    j["config"] = jc;
    nlohmann::ordered_json jchecks = nlohmann::ordered_json::array();
    for (const auto& c : checks) {
      nlohmann::ordered_json e;
      e["name"] = c.name;
      e["passed"] = c.passed;
      if (!c.detail.empty()) e["detail"] = c.detail;
      jchecks.push_back(e);
    }
    j["checks"] = jchecks;
    nlohmann::ordered_json jm = nlohmann::ordered_json::object();
    for (const auto& m : metrics) jm[m.first] = m.second;
    j["metrics"] = jm;
    j["all_passed"] = all_passed();
    return j.dump(2) + "\n";
  }

  /// Writes <prefix>.csv and <prefix>.json.
  void write(const std::string& prefix) const {
    {
      std::ofstream out(prefix + ".csv");
      if (!out) throw std::runtime_error("report: cannot write " + prefix + ".csv");
      out << csv_text();
    }
    {
      std::ofstream out(prefix + ".json");
      if (!out) throw std::runtime_error("report: cannot write " + prefix + ".json");
      out << json_text();
    }
  }

  static std::string timestamp() {
    std::time_t now = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    return buf;
  }
};

}  // namespace invnets::report
