#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <type_traits>
#include <vector>

#include "lowrank/optac.hpp"

namespace lowrank {

/// Invalid configuration. line is 1-based, or 0 when the problem is a missing
/// section or key with no line to point at.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(int line, const std::string& what)
      : std::runtime_error(line > 0 ? "config line " + std::to_string(line) + ": " + what
                                    : "config: " + what),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

// ---------------------------------------------------------------------------
// INI layer: "key = value" lines, "[section]" headers, '#' or ';' comments.
// Keys before the first header belong to the unnamed global section.

struct IniValue {
  std::string text;
  int line = 0;
};

class IniFile {
 public:
  static IniFile parse(std::string_view text) {
    IniFile ini;
    std::string section;
    ini.section_lines_[section] = 0;
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const std::size_t end = std::min(text.find('\n', pos), text.size());
      std::string_view line = text.substr(pos, end - pos);
      pos = end + 1;
      ++line_no;
      const auto trimmed = trim(line);
      if (trimmed.empty() || trimmed.front() == '#' || trimmed.front() == ';') {
        if (end == text.size()) break;
        continue;
      }
      if (trimmed.front() == '[') {
        if (trimmed.back() != ']')
          throw ConfigError(line_no, "malformed section header '" + std::string(trimmed) + "'");
        section = std::string(trim(trimmed.substr(1, trimmed.size() - 2)));
        if (section.empty()) throw ConfigError(line_no, "empty section name");
        if (ini.section_lines_.count(section))
          throw ConfigError(line_no, "duplicate section [" + section + "]");
        ini.section_lines_[section] = line_no;
      } else {
        const auto eq = trimmed.find('=');
        if (eq == std::string_view::npos)
          throw ConfigError(line_no, "expected 'key = value', got '" + std::string(trimmed) + "'");
        const std::string key(trim(trimmed.substr(0, eq)));
        const std::string value(trim(trimmed.substr(eq + 1)));
        if (key.empty()) throw ConfigError(line_no, "empty key");
        if (value.empty()) throw ConfigError(line_no, "key '" + key + "' has no value");
        auto& entries = ini.values_[section];
        if (entries.count(key))
          throw ConfigError(line_no, "duplicate key '" + key + "'" + where(section));
        entries[key] = {value, line_no};
      }
      if (end == text.size()) break;
    }
    return ini;
  }

  bool has_section(const std::string& section) const { return section_lines_.count(section) > 0; }

  int section_line(const std::string& section) const {
    const auto it = section_lines_.find(section);
    return it == section_lines_.end() ? 0 : it->second;
  }

  /// Marks the key as consumed.
  const IniValue* find(const std::string& section, const std::string& key) {
    const auto sit = values_.find(section);
    if (sit == values_.end()) return nullptr;
    const auto kit = sit->second.find(key);
    if (kit == sit->second.end()) return nullptr;
    used_.insert({section, key});
    return &kit->second;
  }

  const IniValue& get(const std::string& section, const std::string& key) {
    if (const auto* v = find(section, key)) return *v;
    throw ConfigError(section_line(section), "missing required key '" + key + "'" + where(section));
  }

  /// Every key and section not consumed (or allowed) is an error.
  void reject_unused(const std::vector<std::string>& allowed_sections) const {
    for (const auto& [section, line] : section_lines_) {
      if (section.empty()) continue;
      if (std::find(allowed_sections.begin(), allowed_sections.end(), section) ==
          allowed_sections.end())
        throw ConfigError(line, "unknown section [" + section + "]");
    }
    for (const auto& [section, entries] : values_)
      for (const auto& [key, value] : entries)
        if (!used_.count({section, key}))
          throw ConfigError(value.line, "unknown key '" + key + "'" + where(section));
  }

  static std::string where(const std::string& section) {
    return section.empty() ? "" : " in [" + section + "]";
  }

 private:
  static std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
  }

  std::map<std::string, int> section_lines_;
  std::map<std::string, std::map<std::string, IniValue>> values_;
  std::set<std::pair<std::string, std::string>> used_;
};

// ---------------------------------------------------------------------------
// Typed values

namespace config_detail {

inline double to_double(const IniValue& v, const std::string& key) {
  double out = 0.0;
  const auto* b = v.text.data();
  const auto res = std::from_chars(b, b + v.text.size(), out);
  if (res.ec != std::errc() || res.ptr != b + v.text.size() || !std::isfinite(out))
    throw ConfigError(v.line, "key '" + key + "' expects a number, got '" + v.text + "'");
  return out;
}

/// Integers may be written as 20000 or 2e4.
inline long to_long(const IniValue& v, const std::string& key) {
  const double x = to_double(v, key);
  if (x != std::floor(x) || std::abs(x) > 9e15)
    throw ConfigError(v.line, "key '" + key + "' expects an integer, got '" + v.text + "'");
  return static_cast<long>(x);
}

inline std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(text);
  while (std::getline(is, item, ',')) {
    const auto first = item.find_first_not_of(" \t");
    const auto last = item.find_last_not_of(" \t");
    out.push_back(first == std::string::npos ? "" : item.substr(first, last - first + 1));
  }
  return out;
}

}  // namespace config_detail

/// "1-10" or "1, 2, 5" or a mix of both; duplicates are errors.
inline std::vector<std::uint64_t> parse_seed_list(const IniValue& v) {
  std::vector<std::uint64_t> out;
  for (const auto& item : config_detail::split_list(v.text)) {
    const auto dash = item.find('-', 1);
    const auto parse = [&](std::string_view t) {
      std::uint64_t x = 0;
      const auto res = std::from_chars(t.data(), t.data() + t.size(), x);
      if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size())
        throw ConfigError(v.line, "bad seed '" + std::string(t) + "'");
      return x;
    };
    if (dash == std::string::npos) {
      out.push_back(parse(item));
    } else {
      const auto lo = parse(std::string_view(item).substr(0, dash));
      const auto hi = parse(std::string_view(item).substr(dash + 1));
      if (hi < lo || hi - lo > 100000) throw ConfigError(v.line, "bad seed range '" + item + "'");
      for (auto s = lo; s <= hi; ++s) out.push_back(s);
    }
  }
  auto sorted = out;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw ConfigError(v.line, "duplicate seed in '" + v.text + "'");
  return out;
}

// ---------------------------------------------------------------------------
// Experiment configuration

enum class ExperimentKind { OptAc, OptAcMisspecified, CrffSweep, OracleBench, Lemmas };

inline const char* to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::OptAc: return "optac";
    case ExperimentKind::OptAcMisspecified: return "optac-misspecified";
    case ExperimentKind::CrffSweep: return "crff-sweep";
    case ExperimentKind::OracleBench: return "oracle-bench";
    case ExperimentKind::Lemmas: return "lemmas";
  }
  return "?";
}

/// Instance parameters; a missing seed means "use the run seed".
struct EnvParams {
  int states = 0, actions = 0, horizon = 0, rank = 0;
  std::optional<std::uint64_t> seed;
};

struct ClassParams {
  int size = 0;
  std::optional<std::uint64_t> seed;
};

struct MisspecParams {
  std::vector<double> zetas;
  std::uint64_t seed = 0;
};

struct CrffParams {
  std::string density = "bump-1d";
  std::vector<double> radii;
  std::vector<int> features;
  std::vector<int> samples;
  int grid_points = 513;
};

struct BenchParams {
  long pe_samples = 20000;
  long fqi_samples = 10000;
  int class_size = 8;
  int data_trajectories = 4;
  double delta = 0.1;
};

struct LemmaParams {
  int elliptical = 1000;
  int tv_hellinger = 10000;
  int md_stability = 100;
  int value_difference = 200;
  std::optional<std::string> only;
};

inline const std::vector<std::string>& lemma_ids() {
  static const std::vector<std::string> ids = {"elliptical-potential", "tv-hellinger",
                                               "md-stability", "value-difference"};
  return ids;
}

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::OptAc;
  std::vector<std::uint64_t> seeds;
  std::string output;
  int threads = 1;
  EnvParams env;
  ClassParams model_class;
  OptAcConfig optac;
  MisspecParams misspec;
  CrffParams crff;
  BenchParams bench;
  LemmaParams lemmas;
};

namespace config_detail {

template <class T>
void read_opt(IniFile& ini, const std::string& sec, const std::string& key, T& out) {
  if (const auto* v = ini.find(sec, key)) {
    if constexpr (std::is_same_v<T, double>) out = to_double(*v, key);
    else out = static_cast<T>(to_long(*v, key));
  }
}

inline void positive(const IniValue* v, double x, const std::string& key) {
  if (v && !(x > 0.0)) throw ConfigError(v->line, "key '" + key + "' must be positive");
}

inline int read_positive_int(IniFile& ini, const std::string& sec, const std::string& key) {
  const auto& v = ini.get(sec, key);
  const long x = to_long(v, key);
  if (x <= 0 || x > 1'000'000'000) throw ConfigError(v.line, "key '" + key + "' must be positive");
  return static_cast<int>(x);
}

template <class T>
std::vector<T> read_list(IniFile& ini, const std::string& sec, const std::string& key) {
  const auto& v = ini.get(sec, key);
  std::vector<T> out;
  for (const auto& item : split_list(v.text)) {
    const IniValue one{item, v.line};
    if constexpr (std::is_same_v<T, double>) out.push_back(to_double(one, key));
    else out.push_back(static_cast<T>(to_long(one, key)));
  }
  if (out.empty()) throw ConfigError(v.line, "key '" + key + "' needs at least one value");
  return out;
}

inline std::optional<std::uint64_t> read_seed(IniFile& ini, const std::string& sec) {
  if (const auto* v = ini.find(sec, "seed")) {
    const long x = to_long(*v, "seed");
    if (x < 0) throw ConfigError(v->line, "seed must be nonnegative");
    return static_cast<std::uint64_t>(x);
  }
  return std::nullopt;
}

inline void read_env(IniFile& ini, ExperimentConfig& cfg) {
  if (!ini.has_section("env")) throw ConfigError(0, "missing required section [env]");
  cfg.env.states = read_positive_int(ini, "env", "states");
  cfg.env.actions = read_positive_int(ini, "env", "actions");
  cfg.env.horizon = read_positive_int(ini, "env", "horizon");
  cfg.env.rank = read_positive_int(ini, "env", "rank");
  cfg.env.seed = read_seed(ini, "env");
  if (cfg.env.rank > cfg.env.states)
    throw ConfigError(ini.section_line("env"), "rank must not exceed states");
}

inline void read_optac(IniFile& ini, OptAcConfig& o) {
  const std::string s = "optac";
  read_opt(ini, s, "iterations", o.iterations);
  read_opt(ini, s, "epsilon", o.epsilon);
  read_opt(ini, s, "delta", o.delta);
  read_opt(ini, s, "eta_scale", o.eta_scale);
  read_opt(ini, s, "pe_samples", o.n_pe_samples);
  read_opt(ini, s, "burn_in", o.burn_in);
  for (const char* key : {"beta", "alpha", "lambda", "eta"}) {
    if (const auto* v = ini.find(s, key)) {
      const double x = to_double(*v, key);
      positive(v, x, key);
      std::optional<double>& slot = std::string_view(key) == "beta"     ? o.beta
                                    : std::string_view(key) == "alpha"  ? o.alpha
                                    : std::string_view(key) == "lambda" ? o.lambda
                                                                        : o.eta;
      slot = x;
    }
  }
  if (const auto* v = ini.find(s, "alpha_rule")) {
    if (v->text == "lemma") o.alpha_rule = AlphaRule::Lemma;
    else if (v->text == "sqrt-actions") o.alpha_rule = AlphaRule::SqrtActions;
    else throw ConfigError(v->line, "alpha_rule must be 'lemma' or 'sqrt-actions'");
  }
  if (const auto* v = ini.find(s, "critic")) {
    if (v->text == "exact") o.critic_mode = CriticMode::Exact;
    else if (v->text == "regression") o.critic_mode = CriticMode::Regression;
    else throw ConfigError(v->line, "critic must be 'exact' or 'regression'");
  }
  try {
    validate_config(o);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(ini.section_line(s), e.what());
  }
}

}  // namespace config_detail

/// Strict parse: unknown sections or keys, missing required keys and malformed
/// values are errors that name the offending line or key.
inline ExperimentConfig parse_experiment_config(std::string_view text) {
  using namespace config_detail;
  IniFile ini = IniFile::parse(text);
  ExperimentConfig cfg;

  const auto& kind = ini.get("", "kind");
  if (kind.text == "optac") cfg.kind = ExperimentKind::OptAc;
  else if (kind.text == "optac-misspecified") cfg.kind = ExperimentKind::OptAcMisspecified;
  else if (kind.text == "crff-sweep") cfg.kind = ExperimentKind::CrffSweep;
  else if (kind.text == "oracle-bench") cfg.kind = ExperimentKind::OracleBench;
  else if (kind.text == "lemmas") cfg.kind = ExperimentKind::Lemmas;
  else throw ConfigError(kind.line, "unknown experiment kind '" + kind.text + "'");

  cfg.seeds = parse_seed_list(ini.get("", "seeds"));
  cfg.output = ini.get("", "output").text;
  if (const auto* v = ini.find("", "threads")) {
    const long t = to_long(*v, "threads");
    if (t < 1 || t > 256) throw ConfigError(v->line, "threads must lie in [1, 256]");
    cfg.threads = static_cast<int>(t);
  }

  std::vector<std::string> sections;
  switch (cfg.kind) {
    case ExperimentKind::OptAc:
    case ExperimentKind::OptAcMisspecified: {
      sections = {"env", "class", "optac"};
      read_env(ini, cfg);
      if (!ini.has_section("class")) throw ConfigError(0, "missing required section [class]");
      cfg.model_class.size = read_positive_int(ini, "class", "size");
      cfg.model_class.seed = read_seed(ini, "class");
      read_optac(ini, cfg.optac);
      if (cfg.kind == ExperimentKind::OptAcMisspecified) {
        sections.push_back("misspecified");
        if (!ini.has_section("misspecified"))
          throw ConfigError(0, "missing required section [misspecified]");
        cfg.misspec.zetas = read_list<double>(ini, "misspecified", "zetas");
        for (double z : cfg.misspec.zetas)
          if (z < 0.0 || z > 0.1)
            throw ConfigError(ini.get("misspecified", "zetas").line, "zetas must lie in [0, 0.1]");
        cfg.misspec.seed = read_seed(ini, "misspecified").value_or(0);
      }
      break;
    }
    case ExperimentKind::CrffSweep: {
      sections = {"crff"};
      if (!ini.has_section("crff")) throw ConfigError(0, "missing required section [crff]");
      if (const auto* v = ini.find("crff", "density")) {
        if (v->text != "bump-1d" && v->text != "bump-2d" && v->text != "gaussian-1d")
          throw ConfigError(v->line, "density must be bump-1d, bump-2d or gaussian-1d");
        cfg.crff.density = v->text;
      }
      cfg.crff.radii = read_list<double>(ini, "crff", "radii");
      cfg.crff.features = read_list<int>(ini, "crff", "features");
      cfg.crff.samples = read_list<int>(ini, "crff", "samples");
      read_opt(ini, "crff", "grid_points", cfg.crff.grid_points);
      for (double w : cfg.crff.radii)
        if (w <= 0.0) throw ConfigError(ini.get("crff", "radii").line, "radii must be positive");
      for (int d : cfg.crff.features)
        if (d < 1) throw ConfigError(ini.get("crff", "features").line, "features must be positive");
      for (int n : cfg.crff.samples)
        if (n < 1) throw ConfigError(ini.get("crff", "samples").line, "samples must be positive");
      if (cfg.crff.grid_points < 3 || cfg.crff.grid_points % 2 == 0)
        throw ConfigError(ini.section_line("crff"), "grid_points must be odd and at least 3");
      break;
    }
    case ExperimentKind::OracleBench: {
      sections = {"env", "bench"};
      read_env(ini, cfg);
      auto& b = cfg.bench;
      read_opt(ini, "bench", "pe_samples", b.pe_samples);
      read_opt(ini, "bench", "fqi_samples", b.fqi_samples);
      read_opt(ini, "bench", "class_size", b.class_size);
      read_opt(ini, "bench", "data_trajectories", b.data_trajectories);
      read_opt(ini, "bench", "delta", b.delta);
      if (b.pe_samples < 1 || b.fqi_samples < 1 || b.class_size < 1 || b.data_trajectories < 0 ||
          !(b.delta > 0.0 && b.delta < 1.0))
        throw ConfigError(ini.section_line("bench"), "bench parameters out of range");
      break;
    }
    case ExperimentKind::Lemmas: {
      sections = {"lemmas"};
      auto& l = cfg.lemmas;
      read_opt(ini, "lemmas", "elliptical", l.elliptical);
      read_opt(ini, "lemmas", "tv_hellinger", l.tv_hellinger);
      read_opt(ini, "lemmas", "md_stability", l.md_stability);
      read_opt(ini, "lemmas", "value_difference", l.value_difference);
      if (const auto* v = ini.find("lemmas", "only")) {
        const auto& ids = lemma_ids();
        if (std::find(ids.begin(), ids.end(), v->text) == ids.end())
          throw ConfigError(v->line, "unknown lemma '" + v->text + "'");
        l.only = v->text;
      }
      if (l.elliptical < 0 || l.tv_hellinger < 0 || l.md_stability < 0 || l.value_difference < 0)
        throw ConfigError(ini.section_line("lemmas"), "trial counts must be nonnegative");
      break;
    }
  }
  ini.reject_unused(sections);
  return cfg;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

}  // namespace lowrank
