#pragma once

// Experiment configuration. Two equivalent file formats:
//
//   key-value:  one `dotted.key = value` per line, `#` starts a comment
//   JSON:       nested objects whose paths spell the same dotted keys
//
// Parameter literals: a box point is "c1, c2, ..."; a mixing measure is
// "z1:w1, z2:w2, ...". Lists of parameters are separated by ';'.

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "mest/error.hpp"
#include "mest/mixing_measure.hpp"
#include "mest/models.hpp"

namespace mest::harness {

enum class OptimizerKind { automatic, grid, em, fw };

inline const char* to_string(OptimizerKind k) noexcept {
  switch (k) {
    case OptimizerKind::automatic: return "auto";
    case OptimizerKind::grid: return "grid";
    case OptimizerKind::em: return "em";
    case OptimizerKind::fw: return "fw";
  }
  return "unknown";
}

struct ExperimentConfig {
  std::string model_id = "gaussian_location";
  std::string contrast_id = "log";
  /// Parameter literal for θ*; empty means the registry default.
  std::string true_parameter;
  std::vector<std::size_t> n_schedule{100, 316, 1000, 3162, 10000};
  std::size_t replicates = 20;
  std::uint64_t master_seed = 1;

  /// `automatic`: grid for parametric models, EM for mixtures under the log
  /// contrast, Frank-Wolfe for other mixture contrasts.
  OptimizerKind optimizer = OptimizerKind::automatic;
  double grid_step = 0.01;
  std::size_t support_size = 201;
  /// Gradient tolerance; unset means 1/n, so the certified gap is at most 1/n.
  std::optional<double> tol;
  /// 0 keeps the optimizer's own default.
  std::size_t max_iter = 0;

  double lambda = 0.5;
  std::string a_star = "contraction";
  std::size_t mc_budget = 100'000;
  double radius = 0.1;
  std::size_t net_size = 32;
  double tail_ceiling = 50.0;
  /// ';'-separated parameter literals; empty means the model's default grid.
  std::string audit_grid;

  /// When false, wall_ms is written as 0 so reports are byte-reproducible.
  bool wall_time = true;
  std::size_t threads = 1;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ArgumentError("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    const unsigned long long d = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ArgumentError("config: '" + key + "' expects a nonnegative integer, got '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ArgumentError("config: '" + key + "' expects true or false, got '" + v + "'");
}

// JSON scalars and arrays rendered in the key-value syntax.
inline std::string json_literal(const nlohmann::json& j, const std::string& key) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_boolean()) return j.get<bool>() ? "true" : "false";
  if (j.is_number_unsigned()) return std::to_string(j.get<std::uint64_t>());
  if (j.is_number_integer()) return std::to_string(j.get<std::int64_t>());
  if (j.is_number()) return fmt::format("{}", j.get<double>());
  if (j.is_object() && j.contains("atoms") && j.contains("weights") && j.size() == 2) {
    const auto& a = j.at("atoms");
    const auto& w = j.at("weights");
    if (!a.is_array() || !w.is_array() || a.size() != w.size()) {
      throw ArgumentError("config: '" + key + "' atoms and weights must be equal-length arrays");
    }
    std::string out;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (i) out += ", ";
      out += json_literal(a[i], key) + ":" + json_literal(w[i], key);
    }
    return out;
  }
  if (j.is_array()) {
    const bool nested = !j.empty() && (j[0].is_array() || j[0].is_object());
    std::string out;
    for (std::size_t i = 0; i < j.size(); ++i) {
      if (i) out += nested ? "; " : ", ";
      out += json_literal(j[i], key);
    }
    return out;
  }
  throw ArgumentError("config: unsupported JSON value at '" + key + "'");
}

inline void flatten_json(const nlohmann::json& j, const std::string& prefix,
                         std::map<std::string, std::string>& out) {
  const bool measure = j.is_object() && j.contains("atoms") && j.contains("weights") && j.size() == 2;
  if (j.is_object() && !measure) {
    for (const auto& [k, v] : j.items()) flatten_json(v, prefix.empty() ? k : prefix + "." + k, out);
    return;
  }
  out[prefix] = json_literal(j, prefix);
}

}  // namespace detail

/// Parses "c1, c2" into a box point.
inline BoxPoint parse_box_point(const std::string& literal) {
  BoxPoint p;
  for (const auto& part : detail::split(literal, ',')) p.push_back(detail::parse_double("parameter", part));
  if (p.empty()) throw ArgumentError("empty parameter literal");
  return p;
}

/// Parses "z1:w1, z2:w2" into a mixing measure (atoms sorted and merged).
inline MixingMeasure parse_measure(const std::string& literal) {
  std::vector<std::pair<double, double>> pairs;
  for (const auto& part : detail::split(literal, ',')) {
    const auto colon = part.find(':');
    if (colon == std::string::npos) {
      throw ArgumentError("measure literal needs atom:weight pairs, got '" + part + "'");
    }
    pairs.emplace_back(detail::parse_double("atom", detail::trim(part.substr(0, colon))),
                       detail::parse_double("weight", detail::trim(part.substr(colon + 1))));
  }
  if (pairs.empty()) throw ArgumentError("empty measure literal");
  return MixingMeasure::from_pairs(std::move(pairs));
}

inline std::string format_box_point(const BoxPoint& p) {
  std::string out;
  for (std::size_t i = 0; i < p.size(); ++i) out += (i ? ", " : "") + fmt::format("{}", p[i]);
  return out;
}

inline std::string format_measure(const MixingMeasure& m) {
  std::string out;
  for (std::size_t i = 0; i < m.size(); ++i) {
    out += (i ? ", " : "") + fmt::format("{}:{}", m.atoms()[i], m.weights()[i]);
  }
  return out;
}

/// Applies dotted key-value pairs on top of the defaults. Unknown keys are
/// errors so that typos do not silently fall back to defaults.
inline ExperimentConfig config_from_map(const std::map<std::string, std::string>& kv) {
  using namespace detail;
  ExperimentConfig c;
  for (const auto& [key, v] : kv) {
    if (key == "model.id") {
      c.model_id = v;
    } else if (key == "model.truth") {
      c.true_parameter = v;
    } else if (key == "contrast.id") {
      c.contrast_id = v;
    } else if (key == "experiment.n_schedule") {
      c.n_schedule.clear();
      for (const auto& part : split(v, ',')) c.n_schedule.push_back(parse_u64(key, part));
    } else if (key == "experiment.replicates") {
      c.replicates = parse_u64(key, v);
    } else if (key == "experiment.seed") {
      c.master_seed = parse_u64(key, v);
    } else if (key == "opt.kind") {
      if (v == "auto") c.optimizer = OptimizerKind::automatic;
      else if (v == "grid") c.optimizer = OptimizerKind::grid;
      else if (v == "em") c.optimizer = OptimizerKind::em;
      else if (v == "fw") c.optimizer = OptimizerKind::fw;
      else throw ArgumentError("config: unknown optimizer '" + v + "'");
    } else if (key == "opt.grid_step") {
      c.grid_step = parse_double(key, v);
    } else if (key == "opt.support_size") {
      c.support_size = parse_u64(key, v);
    } else if (key == "opt.tol") {
      if (v == "auto") c.tol.reset();
      else c.tol = parse_double(key, v);
    } else if (key == "opt.max_iter") {
      c.max_iter = parse_u64(key, v);
    } else if (key == "audit.lambda") {
      c.lambda = parse_double(key, v);
    } else if (key == "audit.a_star") {
      c.a_star = v;
    } else if (key == "audit.n_mc") {
      c.mc_budget = parse_u64(key, v);
    } else if (key == "audit.radius") {
      c.radius = parse_double(key, v);
    } else if (key == "audit.net_size") {
      c.net_size = parse_u64(key, v);
    } else if (key == "audit.tail_ceiling") {
      c.tail_ceiling = parse_double(key, v);
    } else if (key == "audit.grid") {
      c.audit_grid = v;
    } else if (key == "report.wall_time") {
      c.wall_time = parse_bool(key, v);
    } else if (key == "run.threads") {
      c.threads = parse_u64(key, v);
    } else {
      throw ArgumentError("config: unknown key '" + key + "'");
    }
  }
  return c;
}

/// Checks the invariants: strictly increasing positive n_schedule,
/// replicates ≥ 1, positive step sizes.
inline void validate(const ExperimentConfig& c) {
  if (c.n_schedule.empty()) throw ArgumentError("config: n_schedule is empty");
  for (std::size_t i = 0; i < c.n_schedule.size(); ++i) {
    if (c.n_schedule[i] == 0) throw ArgumentError("config: sample sizes must be positive");
    if (i > 0 && c.n_schedule[i] <= c.n_schedule[i - 1]) {
      throw ArgumentError("config: n_schedule must be strictly increasing");
    }
  }
  if (c.replicates == 0) throw ArgumentError("config: replicates must be at least 1");
  if (!(c.grid_step > 0.0)) throw ArgumentError("config: opt.grid_step must be positive");
  if (c.support_size == 0) throw ArgumentError("config: opt.support_size must be positive");
  if (c.tol && !(*c.tol > 0.0)) throw ArgumentError("config: opt.tol must be positive");
  if (!(c.lambda > 0.0 && c.lambda < 1.0)) throw ArgumentError("config: audit.lambda must lie in (0, 1)");
  if (!(c.radius >= 0.0)) throw ArgumentError("config: audit.radius must be nonnegative");
  if (c.net_size == 0) throw ArgumentError("config: audit.net_size must be positive");
  if (c.mc_budget < 2) throw ArgumentError("config: audit.n_mc must be at least 2");
}

inline ExperimentConfig parse_key_value(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ArgumentError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    if (!kv.emplace(key, detail::trim(line.substr(eq + 1))).second) {
      throw ArgumentError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
  }
  ExperimentConfig c = config_from_map(kv);
  validate(c);
  return c;
}

inline ExperimentConfig parse_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ArgumentError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ArgumentError("config: JSON root must be an object");
  std::map<std::string, std::string> kv;
  detail::flatten_json(j, "", kv);
  ExperimentConfig c = config_from_map(kv);
  validate(c);
  return c;
}

/// Reads a config file; JSON when the first non-blank character is '{'.
inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') return parse_json(text);
  return parse_key_value(text);
}

}  // namespace mest::harness
