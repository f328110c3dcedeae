#ifndef NAM_MANIFEST_HPP
#define NAM_MANIFEST_HPP

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "nam/errors.hpp"
#include "nam/ingest.hpp"
#include "nam/pipeline.hpp"

namespace nam {

// Flat key-value run manifest with [section] headers:
//
//   [data]
//   ratings = ml/ratings.csv
//   ...
//
// Keys are addressed as "section.key". Command-line flags override values.
struct Manifest {
  std::map<std::string, std::string> values;

  static Manifest load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest: " + path);
    Manifest m;
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto first = line.find_first_not_of(" \t");
      if (first == std::string::npos) continue;
      const auto last = line.find_last_not_of(" \t\r");
      line = line.substr(first, last - first + 1);
      if (line.empty() || line[0] == '#') continue;
      if (line.front() == '[' && line.back() == ']') {
        section = line.substr(1, line.size() - 2);
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ParseError(path, line_no, "expected key = value");
      auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t");
        if (a == std::string::npos) return std::string();
        const auto b = s.find_last_not_of(" \t");
        return s.substr(a, b - a + 1);
      };
      const std::string key = trim(line.substr(0, eq));
      if (key.empty()) throw ParseError(path, line_no, "empty key");
      m.values[section.empty() ? key : section + "." + key] =
          trim(line.substr(eq + 1));
    }
    return m;
  }

  bool has(const std::string& key) const { return values.count(key) > 0; }

  std::string get(const std::string& key, const std::string& fallback = "") const {
    auto it = values.find(key);
    return it == values.end() ? fallback : it->second;
  }

  std::string require(const std::string& key) const {
    auto it = values.find(key);
    if (it == values.end())
      throw DomainError("manifest: missing required key '" + key + "'");
    return it->second;
  }

  long get_int(const std::string& key, long fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    try {
      return std::stol(it->second);
    } catch (const std::exception&) {
      throw DomainError("manifest: key '" + key + "' is not an integer");
    }
  }

  double get_real(const std::string& key, double fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    try {
      return std::stod(it->second);
    } catch (const std::exception&) {
      throw DomainError("manifest: key '" + key + "' is not a number");
    }
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values.find(key);
    if (it == values.end()) return fallback;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw DomainError("manifest: key '" + key + "' is not a boolean");
  }
};

// "genres:multihot,year:scalar" -> schema columns
inline std::vector<AttributeColumn> parse_view_schema(const std::string& spec) {
  std::vector<AttributeColumn> out;
  std::istringstream ss(spec);
  std::string entry;
  while (std::getline(ss, entry, ',')) {
    if (entry.empty()) continue;
    const auto colon = entry.find(':');
    if (colon == std::string::npos)
      throw DomainError("view schema entry needs name:kind, got '" + entry + "'");
    AttributeColumn col;
    col.name = entry.substr(0, colon);
    col.kind = view_kind_from_name(entry.substr(colon + 1));
    out.push_back(col);
  }
  return out;
}

// "1,5,10,20" or "1..20"
inline std::vector<std::size_t> parse_k_list(const std::string& spec) {
  std::vector<std::size_t> out;
  const auto dots = spec.find("..");
  if (dots != std::string::npos) {
    const long a = std::stol(spec.substr(0, dots));
    const long b = std::stol(spec.substr(dots + 2));
    for (long k = a; k <= b; ++k) out.push_back(static_cast<std::size_t>(k));
    return out;
  }
  std::istringstream ss(spec);
  std::string entry;
  while (std::getline(ss, entry, ','))
    if (!entry.empty()) out.push_back(static_cast<std::size_t>(std::stol(entry)));
  if (out.empty()) throw DomainError("empty K list");
  return out;
}

inline TrainConfig train_config_from(const Manifest& m) {
  TrainConfig cfg;
  cfg.epochs = static_cast<int>(m.get_int("train.epochs", cfg.epochs));
  cfg.batch_size = static_cast<int>(m.get_int("train.batch_size", cfg.batch_size));
  cfg.negatives = static_cast<int>(m.get_int("train.negatives", cfg.negatives));
  cfg.lambda = m.get_real("train.lambda", cfg.lambda);
  cfg.z_t = static_cast<std::size_t>(m.get_int("train.z_t", 100));
  cfg.z_a = static_cast<std::size_t>(m.get_int("train.z_a", 0));
  cfg.lr = m.get_real("train.lr", cfg.lr);
  cfg.seed = static_cast<std::uint64_t>(m.get_int("train.seed", 1));
  cfg.stop_gradient_psi = m.get_bool("train.stop_gradient_psi", true);
  cfg.include_positive_in_partition =
      m.get_bool("train.include_positive_in_partition", false);
  cfg.pair_cap = static_cast<std::size_t>(m.get_int("train.pair_cap", 1000000));
  return cfg;
}

inline I2VConfig i2v_config_from(const Manifest& m) {
  I2VConfig cfg;
  cfg.dim = static_cast<std::size_t>(m.get_int("i2v.dim", 100));
  cfg.epochs = static_cast<int>(m.get_int("i2v.epochs", cfg.epochs));
  cfg.neg_ratio = static_cast<int>(m.get_int("i2v.neg_ratio", cfg.neg_ratio));
  cfg.lr = m.get_real("i2v.lr", cfg.lr);
  cfg.seed = static_cast<std::uint64_t>(m.get_int("train.seed", 1));
  return cfg;
}

}  // namespace nam

#endif  // NAM_MANIFEST_HPP
