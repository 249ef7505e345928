#include "geotdm/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace geotdm {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void fail(const std::string& origin, int line, const std::string& msg) {
  throw std::runtime_error("config error: " + origin + ":" + std::to_string(line) + ": " + msg);
}

}  // namespace

Config Config::parse_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config error: cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_string(ss.str(), path);
}

Config Config::parse_string(const std::string& text, const std::string& origin) {
  Config cfg;
  cfg.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(origin, lineno, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) fail(origin, lineno, "empty section name");
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos) fail(origin, lineno, "expected key = value, got '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) fail(origin, lineno, "empty key");
    if (section.empty()) fail(origin, lineno, "key '" + key + "' before any [section]");
    auto& sec = cfg.sections_[section];
    if (sec.count(key))
      fail(origin, lineno, "duplicate key '" + key + "' in section [" + section + "]");
    sec[key] = value;
  }
  return cfg;
}

bool Config::has(const std::string& section, const std::string& key) const {
  auto it = sections_.find(section);
  return it != sections_.end() && it->second.count(key) > 0;
}

std::string Config::get_str(const std::string& section, const std::string& key) const {
  auto it = sections_.find(section);
  if (it == sections_.end() || !it->second.count(key))
    throw std::runtime_error("config error: " + origin_ + ": missing [" + section + "] " + key);
  return it->second.at(key);
}

std::string Config::get_str(const std::string& section, const std::string& key,
                            const std::string& fallback) const {
  return has(section, key) ? get_str(section, key) : fallback;
}

int64_t Config::get_int(const std::string& section, const std::string& key) const {
  const std::string v = get_str(section, key);
  size_t used = 0;
  int64_t out;
  try {
    out = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size())
    throw std::runtime_error("config error: [" + section + "] " + key + ": cannot parse '" + v +
                             "' as integer");
  return out;
}

int64_t Config::get_int(const std::string& section, const std::string& key,
                        int64_t fallback) const {
  return has(section, key) ? get_int(section, key) : fallback;
}

double Config::get_float(const std::string& section, const std::string& key) const {
  const std::string v = get_str(section, key);
  size_t used = 0;
  double out;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size())
    throw std::runtime_error("config error: [" + section + "] " + key + ": cannot parse '" + v +
                             "' as float");
  return out;
}

double Config::get_float(const std::string& section, const std::string& key,
                         double fallback) const {
  return has(section, key) ? get_float(section, key) : fallback;
}

bool Config::get_bool(const std::string& section, const std::string& key) const {
  const std::string v = get_str(section, key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::runtime_error("config error: [" + section + "] " + key + ": cannot parse '" + v +
                           "' as bool");
}

bool Config::get_bool(const std::string& section, const std::string& key, bool fallback) const {
  return has(section, key) ? get_bool(section, key) : fallback;
}

void Config::set(const std::string& section, const std::string& key, const std::string& value) {
  sections_[section][key] = value;
}

void Config::validate(const std::map<std::string, std::set<std::string>>& schema) const {
  std::vector<std::string> bad;
  for (const auto& [section, kv] : sections_) {
    auto it = schema.find(section);
    if (it == schema.end()) {
      bad.push_back("[" + section + "] (unknown section)");
      continue;
    }
    for (const auto& [key, value] : kv)
      if (!it->second.count(key)) bad.push_back("[" + section + "] " + key);
  }
  if (!bad.empty()) {
    std::string msg = "config error: " + origin_ + ": unknown keys:";
    for (const auto& b : bad) msg += "\n  " + b;
    throw std::runtime_error(msg);
  }
}

std::string Config::serialize() const {
  std::ostringstream os;
  bool first = true;
  for (const auto& [section, kv] : sections_) {
    if (!first) os << "\n";
    first = false;
    os << "[" << section << "]\n";
    for (const auto& [key, value] : kv) os << key << " = " << value << "\n";
  }
  return os.str();
}

const std::map<std::string, std::set<std::string>>& run_config_schema() {
  static const std::map<std::string, std::set<std::string>> schema = {
      {"run", {"seed", "out"}},
      {"system",
       {"kind", "n_bodies", "space_dim", "dt", "substeps", "softening", "coupling",
        "rest_length", "spring_prob", "pos_scale", "vel_scale", "mass_lo", "mass_hi"}},
      {"dataset", {"dir", "n_train", "n_valid", "n_test", "t_total", "t_cond", "t_target"}},
      {"model",
       {"n_layers", "hidden_dim", "time_emb_dim", "n_heads", "conditional"}},
      {"schedule", {"n_steps", "beta_start", "beta_end"}},
      {"train",
       {"batch_size", "learning_rate", "max_epochs", "valid_interval", "patience",
        "clip_norm", "adam_beta1", "adam_beta2", "adam_eps"}},
      {"sample", {"count", "k_samples"}},
      {"evaluate", {"bins", "k_samples", "surrogate_steps", "min_over_k"}},
  };
  return schema;
}

}  // namespace geotdm
