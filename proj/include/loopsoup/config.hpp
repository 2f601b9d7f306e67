#pragma once

// Run configuration: a TOML subset.
//
//   # comment
//   experiment = "isomorphism"
//   nx = 2
//   beta = "calibrated"          # or a positive number
//   box_widths = [1, 2, 4]
//   [arcs]
//   left = 1                     # whole side
//   "top:0-2" = 2                # positions 0..2 inclusive
//   [thresholds]
//   z_max = 4.0
//
// Keys are validated; errors carry the line number.

#include "loopsoup/lattice.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace loopsoup {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(int line, const std::string& msg)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + msg
                                    : msg),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

struct Thresholds {
  double z_max = 4.0;         // z-score claims
  double level = 0.01;        // test level before Bonferroni
  double moment_z_max = 5.0;  // moment checks of the isomorphism experiment
  long min_class = 1000;      // smallest conditioned class for two-sample tests
  friend bool operator==(const Thresholds&, const Thresholds&) = default;
};

struct RunConfig {
  std::string experiment = "isomorphism";
  int nx = 2;
  int ny = 2;
  std::vector<ArcSegment> arcs;
  double alpha = 0.5;
  std::optional<double> beta;      // empty: calibrated, beta = u^2 / 4
  double u = 1.0;
  std::optional<double> m_target;  // crossing mass; overrides beta if set
  long replicas = 10000;
  int k_max = 0;                   // 0: smallest K_max meeting tail_tolerance
  double tail_tolerance = 1e-9;
  std::uint64_t seed = 1;
  int workers = 1;
  std::string report_dir = "reports";
  bool csv = false;
  Thresholds thresholds;

  // strip parity
  int strip_height = 2;
  std::vector<int> box_widths = {4, 8, 16, 32};
  int boxes = 8;
  int box_gap = 0;
  double strip_epsilon = 0.1;
  // multi-arc parity
  int n_arcs = 3;
  int k_fields = 3;
  // rewiring
  long rewire_steps = 10000;
  int sweeps = 10;
  // rectangle crossing
  double k_level = 0.3;
  int energy_subsample = 300;
  int permutations = 200;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Drops a trailing comment that is not inside a string.
inline std::string strip_comment(const std::string& s) {
  bool quoted = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') quoted = !quoted;
    if (s[i] == '#' && !quoted) return s.substr(0, i);
  }
  return s;
}

inline bool is_quoted(const std::string& v) {
  return v.size() >= 2 && v.front() == '"' && v.back() == '"';
}

inline std::string unquote(const std::string& v, int line) {
  if (!is_quoted(v)) throw ConfigError(line, "expected a quoted string, got " + v);
  return v.substr(1, v.size() - 2);
}

inline long long parse_int(const std::string& v, int line, const std::string& key) {
  std::size_t pos = 0;
  long long x = 0;
  try {
    x = std::stoll(v, &pos);
  } catch (...) {
    pos = 0;
  }
  if (pos != v.size() || v.empty())
    throw ConfigError(line, "key '" + key + "' expects an integer, got " + v);
  return x;
}

inline double parse_double(const std::string& v, int line, const std::string& key) {
  std::size_t pos = 0;
  double x = 0;
  try {
    x = std::stod(v, &pos);
  } catch (...) {
    pos = 0;
  }
  if (pos != v.size() || v.empty() || !std::isfinite(x))
    throw ConfigError(line, "key '" + key + "' expects a number, got " + v);
  return x;
}

inline bool parse_bool(const std::string& v, int line, const std::string& key) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError(line, "key '" + key + "' expects true or false, got " + v);
}

inline std::vector<int> parse_int_list(const std::string& v, int line,
                                       const std::string& key) {
  if (v.size() < 2 || v.front() != '[' || v.back() != ']')
    throw ConfigError(line, "key '" + key + "' expects a list like [1, 2], got " + v);
  std::vector<int> out;
  std::stringstream ss(v.substr(1, v.size() - 2));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(static_cast<int>(parse_int(item, line, key)));
  }
  return out;
}

inline Side parse_side(const std::string& s, int line) {
  if (s == "left") return Side::left;
  if (s == "right") return Side::right;
  if (s == "bottom") return Side::bottom;
  if (s == "top") return Side::top;
  throw ConfigError(line, "unknown side '" + s + "' (left, right, bottom, top)");
}

/// "left", "left:3" or "left:0-2" (inclusive).
inline ArcSegment parse_arc_key(const std::string& raw, int line) {
  const std::string key = is_quoted(raw) ? raw.substr(1, raw.size() - 2) : raw;
  ArcSegment seg{};
  const auto colon = key.find(':');
  seg.side = parse_side(key.substr(0, colon), line);
  if (colon == std::string::npos) return seg;
  const std::string range = key.substr(colon + 1);
  const auto dash = range.find('-');
  const int a = static_cast<int>(parse_int(range.substr(0, dash), line, key));
  const int b = dash == std::string::npos
                    ? a
                    : static_cast<int>(parse_int(range.substr(dash + 1), line, key));
  if (a < 0 || b < a) throw ConfigError(line, "bad arc range '" + key + "'");
  seg.begin = a;
  seg.end = b + 1;
  return seg;
}

inline std::string arc_key(const ArcSegment& s) {
  if (s.begin == 0 && s.end < 0) return side_name(s.side);
  std::ostringstream os;
  os << '"' << side_name(s.side) << ':' << s.begin << '-' << (s.end - 1) << '"';
  return os.str();
}

inline std::string fmt_double(double x) {
  std::ostringstream os;
  os << std::setprecision(17) << x;
  std::string s = os.str();
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

}  // namespace detail

inline const std::vector<std::string>& known_experiments() {
  static const std::vector<std::string> names = {
      "isomorphism", "rewiring", "strip_parity", "rectangle_crossing",
      "multi_arc_parity"};
  return names;
}

/// Rectangle domain of the configuration.
inline DomainGraph config_domain(const RunConfig& c) {
  return build_rect_domain(c.nx, c.ny, c.arcs);
}

inline RunConfig parse_config(std::istream& is) {
  RunConfig c;
  std::string table;
  std::string line;
  int lineno = 0;
  std::map<std::string, int> seen;
  std::vector<int> arc_lines;
  int experiment_line = 0, alpha_line = 0, replicas_line = 0, dims_line = 0,
      workers_line = 0, box_line = 0, nar_line = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = detail::trim(detail::strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(lineno, "malformed table header");
      table = detail::trim(line.substr(1, line.size() - 2));
      if (table != "arcs" && table != "thresholds")
        throw ConfigError(lineno, "unknown table [" + table + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(lineno, "expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    if (key.empty() || val.empty()) throw ConfigError(lineno, "empty key or value");
    const std::string full = table.empty() ? key : table + "." + key;
    if (seen.count(full))
      throw ConfigError(lineno, "duplicate key '" + full + "' (first on line " +
                                    std::to_string(seen[full]) + ")");
    seen[full] = lineno;

    using namespace detail;
    if (table == "arcs") {
      ArcSegment seg = parse_arc_key(key, lineno);
      seg.arc = static_cast<int>(parse_int(val, lineno, key));
      if (seg.arc < 1) throw ConfigError(lineno, "arc index must be >= 1");
      c.arcs.push_back(seg);
      arc_lines.push_back(lineno);
      continue;
    }
    if (table == "thresholds") {
      if (key == "z_max") c.thresholds.z_max = parse_double(val, lineno, key);
      else if (key == "level") c.thresholds.level = parse_double(val, lineno, key);
      else if (key == "moment_z_max")
        c.thresholds.moment_z_max = parse_double(val, lineno, key);
      else if (key == "min_class")
        c.thresholds.min_class = parse_int(val, lineno, key);
      else throw ConfigError(lineno, "unknown key '" + full + "'");
      if (c.thresholds.z_max <= 0 || c.thresholds.moment_z_max <= 0 ||
          c.thresholds.level <= 0 || c.thresholds.level >= 1 ||
          c.thresholds.min_class < 1)
        throw ConfigError(lineno, "threshold out of range");
      continue;
    }

    if (key == "experiment") {
      c.experiment = unquote(val, lineno);
      experiment_line = lineno;
    } else if (key == "nx") {
      c.nx = static_cast<int>(parse_int(val, lineno, key));
      dims_line = lineno;
    } else if (key == "ny") {
      c.ny = static_cast<int>(parse_int(val, lineno, key));
      dims_line = lineno;
    } else if (key == "alpha") {
      c.alpha = parse_double(val, lineno, key);
      alpha_line = lineno;
    } else if (key == "beta") {
      if (is_quoted(val)) {
        if (unquote(val, lineno) != "calibrated")
          throw ConfigError(lineno, "beta must be a number or \"calibrated\"");
        c.beta.reset();
      } else {
        c.beta = parse_double(val, lineno, key);
        if (*c.beta <= 0) throw ConfigError(lineno, "beta must be > 0");
      }
    } else if (key == "u") {
      c.u = parse_double(val, lineno, key);
    } else if (key == "m_target") {
      c.m_target = parse_double(val, lineno, key);
      if (*c.m_target <= 0) throw ConfigError(lineno, "m_target must be > 0");
    } else if (key == "replicas") {
      c.replicas = parse_int(val, lineno, key);
      replicas_line = lineno;
    } else if (key == "k_max") {
      c.k_max = static_cast<int>(parse_int(val, lineno, key));
      if (c.k_max != 0 && c.k_max < 2)
        throw ConfigError(lineno, "k_max must be 0 (automatic) or >= 2");
    } else if (key == "tail_tolerance") {
      c.tail_tolerance = parse_double(val, lineno, key);
      if (c.tail_tolerance <= 0) throw ConfigError(lineno, "tail_tolerance must be > 0");
    } else if (key == "seed") {
      const long long s = parse_int(val, lineno, key);
      if (s < 0) throw ConfigError(lineno, "seed must be >= 0");
      c.seed = static_cast<std::uint64_t>(s);
    } else if (key == "workers") {
      c.workers = static_cast<int>(parse_int(val, lineno, key));
      workers_line = lineno;
    } else if (key == "report_dir") {
      c.report_dir = unquote(val, lineno);
    } else if (key == "csv") {
      c.csv = parse_bool(val, lineno, key);
    } else if (key == "strip_height") {
      c.strip_height = static_cast<int>(parse_int(val, lineno, key));
      if (c.strip_height < 1) throw ConfigError(lineno, "strip_height must be >= 1");
    } else if (key == "box_widths") {
      c.box_widths = parse_int_list(val, lineno, key);
      box_line = lineno;
    } else if (key == "boxes") {
      c.boxes = static_cast<int>(parse_int(val, lineno, key));
      if (c.boxes < 1) throw ConfigError(lineno, "boxes must be >= 1");
    } else if (key == "box_gap") {
      c.box_gap = static_cast<int>(parse_int(val, lineno, key));
      if (c.box_gap < 0)
        throw ConfigError(lineno, "box_gap < 0 would make boxes overlap");
    } else if (key == "strip_epsilon") {
      c.strip_epsilon = parse_double(val, lineno, key);
    } else if (key == "n_arcs") {
      c.n_arcs = static_cast<int>(parse_int(val, lineno, key));
      nar_line = lineno;
    } else if (key == "k_fields") {
      c.k_fields = static_cast<int>(parse_int(val, lineno, key));
      if (c.k_fields < 0) throw ConfigError(lineno, "k_fields must be >= 0");
    } else if (key == "rewire_steps") {
      c.rewire_steps = parse_int(val, lineno, key);
      if (c.rewire_steps < 0) throw ConfigError(lineno, "rewire_steps must be >= 0");
    } else if (key == "sweeps") {
      c.sweeps = static_cast<int>(parse_int(val, lineno, key));
      if (c.sweeps < 0) throw ConfigError(lineno, "sweeps must be >= 0");
    } else if (key == "k_level") {
      c.k_level = parse_double(val, lineno, key);
      if (c.k_level < 0) throw ConfigError(lineno, "k_level must be >= 0");
    } else if (key == "energy_subsample") {
      c.energy_subsample = static_cast<int>(parse_int(val, lineno, key));
      if (c.energy_subsample < 0) throw ConfigError(lineno, "energy_subsample must be >= 0");
    } else if (key == "permutations") {
      c.permutations = static_cast<int>(parse_int(val, lineno, key));
      if (c.permutations < 0) throw ConfigError(lineno, "permutations must be >= 0");
    } else {
      throw ConfigError(lineno, "unknown key '" + key + "'");
    }
  }

  if (std::find(known_experiments().begin(), known_experiments().end(),
                c.experiment) == known_experiments().end())
    throw ConfigError(experiment_line, "unknown experiment '" + c.experiment + "'");
  if (c.nx < 1 || c.ny < 1) throw ConfigError(dims_line, "nx and ny must be >= 1");
  if (!(c.alpha > 0)) throw ConfigError(alpha_line, "alpha must be > 0");
  if (c.replicas < 1) throw ConfigError(replicas_line, "replicas must be >= 1");
  if (c.workers < 1) throw ConfigError(workers_line, "workers must be >= 1");
  if (c.box_widths.empty()) throw ConfigError(box_line, "box_widths is empty");
  for (int w : c.box_widths)
    if (w < 1) throw ConfigError(box_line, "box widths must be >= 1");
  if (c.experiment == "multi_arc_parity" && c.arcs.empty() &&
      (c.n_arcs < 2 || c.n_arcs > 6))
    throw ConfigError(nar_line, "n_arcs must be in 2..6");

  // Arc geometry: add segments one at a time so the offending line is known.
  std::vector<ArcSegment> prefix;
  for (std::size_t s = 0; s < c.arcs.size(); ++s) {
    prefix.push_back(c.arcs[s]);
    try {
      // contiguity of arc indices is checked on the full set below
      build_rect_domain(c.nx, c.ny, prefix);
    } catch (const DomainError& e) {
      const std::string what = e.what();
      if (what.find("contiguous") != std::string::npos) continue;
      throw ConfigError(arc_lines[s], what);
    }
  }
  try {
    config_domain(c);
  } catch (const DomainError& e) {
    throw ConfigError(arc_lines.empty() ? 0 : arc_lines.back(), e.what());
  }
  return c;
}

inline RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(0, "cannot open config file '" + path + "'");
  return parse_config(in);
}

inline RunConfig parse_config_string(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

/// Canonical text: every key, fixed order, full precision.
inline std::string emit_config(const RunConfig& c) {
  using detail::fmt_double;
  std::ostringstream os;
  auto list = [](const std::vector<int>& xs) {
    std::string s = "[";
    for (std::size_t i = 0; i < xs.size(); ++i)
      s += (i ? ", " : "") + std::to_string(xs[i]);
    return s + "]";
  };
  os << "experiment = \"" << c.experiment << "\"\n"
     << "nx = " << c.nx << "\nny = " << c.ny << '\n'
     << "alpha = " << fmt_double(c.alpha) << '\n'
     << "beta = " << (c.beta ? fmt_double(*c.beta) : "\"calibrated\"") << '\n'
     << "u = " << fmt_double(c.u) << '\n';
  if (c.m_target) os << "m_target = " << fmt_double(*c.m_target) << '\n';
  os << "replicas = " << c.replicas << '\n'
     << "k_max = " << c.k_max << '\n'
     << "tail_tolerance = " << fmt_double(c.tail_tolerance) << '\n'
     << "seed = " << c.seed << '\n'
     << "workers = " << c.workers << '\n'
     << "report_dir = \"" << c.report_dir << "\"\n"
     << "csv = " << (c.csv ? "true" : "false") << '\n'
     << "strip_height = " << c.strip_height << '\n'
     << "box_widths = " << list(c.box_widths) << '\n'
     << "boxes = " << c.boxes << '\n'
     << "box_gap = " << c.box_gap << '\n'
     << "strip_epsilon = " << fmt_double(c.strip_epsilon) << '\n'
     << "n_arcs = " << c.n_arcs << '\n'
     << "k_fields = " << c.k_fields << '\n'
     << "rewire_steps = " << c.rewire_steps << '\n'
     << "sweeps = " << c.sweeps << '\n'
     << "k_level = " << fmt_double(c.k_level) << '\n'
     << "energy_subsample = " << c.energy_subsample << '\n'
     << "permutations = " << c.permutations << '\n';
  os << "\n[thresholds]\n"
     << "z_max = " << fmt_double(c.thresholds.z_max) << '\n'
     << "level = " << fmt_double(c.thresholds.level) << '\n'
     << "moment_z_max = " << fmt_double(c.thresholds.moment_z_max) << '\n'
     << "min_class = " << c.thresholds.min_class << '\n';
  if (!c.arcs.empty()) {
    os << "\n[arcs]\n";
    for (const ArcSegment& s : c.arcs)
      os << detail::arc_key(s) << " = " << s.arc << '\n';
  }
  return os.str();
}

/// Same content as JSON, for the report echo.  Workers and the report
/// directory are left out: they do not change results.
inline nlohmann::json config_json(const RunConfig& c) {
  nlohmann::json arcs = nlohmann::json::array();
  for (const ArcSegment& s : c.arcs)
    arcs.push_back({{"side", side_name(s.side)},
                    {"begin", s.begin},
                    {"end", s.end},
                    {"arc", s.arc}});
  nlohmann::json j = {
      {"experiment", c.experiment},
      {"nx", c.nx},
      {"ny", c.ny},
      {"arcs", arcs},
      {"alpha", c.alpha},
      {"u", c.u},
      {"replicas", c.replicas},
      {"k_max", c.k_max},
      {"tail_tolerance", c.tail_tolerance},
      {"seed", c.seed},
      {"strip_height", c.strip_height},
      {"box_widths", c.box_widths},
      {"boxes", c.boxes},
      {"box_gap", c.box_gap},
      {"strip_epsilon", c.strip_epsilon},
      {"n_arcs", c.n_arcs},
      {"k_fields", c.k_fields},
      {"rewire_steps", c.rewire_steps},
      {"sweeps", c.sweeps},
      {"k_level", c.k_level},
      {"energy_subsample", c.energy_subsample},
      {"permutations", c.permutations},
      {"thresholds",
       {{"z_max", c.thresholds.z_max},
        {"level", c.thresholds.level},
        {"moment_z_max", c.thresholds.moment_z_max},
        {"min_class", c.thresholds.min_class}}}};
  j["beta"] = c.beta ? nlohmann::json(*c.beta) : nlohmann::json("calibrated");
  if (c.m_target) j["m_target"] = *c.m_target;
  return j;
}

}  // namespace loopsoup
