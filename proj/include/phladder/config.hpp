#pragma once

#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "core.hpp"
#include "model.hpp"
#include "scales.hpp"

namespace phl {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Everything a run depends on. Flags override values read from a config file.
struct RunConfig {
  ScaleSystem scales;
  double mass = 1.0;
  double mu = 0.5;
  std::string dispersion_file;
  std::uint64_t seed = 1;
  double tol = 1e-5;
  std::string output;

  DispersionModel model() const {
    if (!dispersion_file.empty()) return DispersionModel::load_tabulated(dispersion_file);
    return DispersionModel::circular(mass, mu);
  }
};

// Flat "key = value" lines; '#' starts a comment; values may be double-quoted.
inline std::map<std::string, std::string> parse_flat_config(std::istream& in) {
  std::map<std::string, std::string> out;
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return std::string{};
    auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    std::string body;
    bool in_str = false;
    for (char c : line) {
      if (c == '"') in_str = !in_str;
      if (c == '#' && !in_str) break;
      body += c;
    }
    body = trim(body);
    if (body.empty()) continue;
    if (body.front() == '[') throw ConfigError("line " + std::to_string(lineno) + ": tables are not supported");
    auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(body.substr(0, eq)), val = trim(body.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    if (val.size() >= 2 && val.front() == '"' && val.back() == '"') val = val.substr(1, val.size() - 2);
    if (out.count(key)) throw ConfigError("line " + std::to_string(lineno) + ": duplicate key " + key);
    out[key] = val;
  }
  return out;
}

namespace detail {

inline double config_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double x;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError("key " + key + ": not a number: " + v);
  }
  if (pos != v.size()) throw ConfigError("key " + key + ": not a number: " + v);
  return x;
}

inline long long config_int(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long long x;
  try {
    x = std::stoll(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError("key " + key + ": not an integer: " + v);
  }
  if (pos != v.size()) throw ConfigError("key " + key + ": not an integer: " + v);
  return x;
}

}  // namespace detail

inline void apply_config(RunConfig& cfg, const std::map<std::string, std::string>& kv) {
  for (const auto& [k, v] : kv) {
    if (k == "M")
      cfg.scales.M = detail::config_double(k, v);
    else if (k == "aleph")
      cfg.scales.aleph = detail::config_double(k, v);
    else if (k == "r0")
      cfg.scales.r0 = static_cast<int>(detail::config_int(k, v));
    else if (k == "re")
      cfg.scales.re = static_cast<int>(detail::config_int(k, v));
    else if (k == "bump_sharpness")
      cfg.scales.bump_sharpness = detail::config_double(k, v);
    else if (k == "mass")
      cfg.mass = detail::config_double(k, v);
    else if (k == "mu")
      cfg.mu = detail::config_double(k, v);
    else if (k == "dispersion")
      cfg.dispersion_file = v;
    else if (k == "seed")
      cfg.seed = static_cast<std::uint64_t>(detail::config_int(k, v));
    else if (k == "tol")
      cfg.tol = detail::config_double(k, v);
    else if (k == "output")
      cfg.output = v;
    else
      throw ConfigError("unknown config key " + k);
  }
  try {
    cfg.scales.validate();
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  RunConfig cfg;
  apply_config(cfg, parse_flat_config(in));
  return cfg;
}

}  // namespace phl
