#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

namespace geotdm {

// Run configuration: sections of key = value pairs, '#' comments.
//
//   [system]
//   kind = spring
//   n_bodies = 3
//
// Duplicate keys are an error; getters throw on missing keys unless a
// default is supplied. validate() rejects any section or key that is not in
// the schema, so a typo never silently falls back to a default.
class Config {
 public:
  static Config parse_file(const std::string& path);
  static Config parse_string(const std::string& text, const std::string& origin = "<string>");

  bool has(const std::string& section, const std::string& key) const;

  std::string get_str(const std::string& section, const std::string& key) const;
  std::string get_str(const std::string& section, const std::string& key,
                      const std::string& fallback) const;
  int64_t get_int(const std::string& section, const std::string& key) const;
  int64_t get_int(const std::string& section, const std::string& key, int64_t fallback) const;
  double get_float(const std::string& section, const std::string& key) const;
  double get_float(const std::string& section, const std::string& key, double fallback) const;
  bool get_bool(const std::string& section, const std::string& key) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;

  void set(const std::string& section, const std::string& key, const std::string& value);

  // Throws listing every section/key pair that the schema does not allow.
  void validate(const std::map<std::string, std::set<std::string>>& schema) const;

  std::string serialize() const;

  const std::map<std::string, std::map<std::string, std::string>>& sections() const {
    return sections_;
  }

 private:
  std::string origin_ = "<none>";
  std::map<std::string, std::map<std::string, std::string>> sections_;
};

// Every section/key a run config may contain, shared by all subcommands.
const std::map<std::string, std::set<std::string>>& run_config_schema();

}  // namespace geotdm
