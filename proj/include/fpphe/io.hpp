#pragma once

// Files: key=value run configuration, versioned CSV, binary snapshots,
// SHA-256 manifests and PPM rendering.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "fpphe/engine.hpp"
#include "fpphe/multiscale.hpp"
#include "fpphe/randomness.hpp"

namespace fpphe {

inline constexpr const char* kToolVersion = "fpphe 1.0.0";

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Number formatting shared by CSV, config echo and manifests.

inline std::string fmt_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_real(const std::string& key, const std::string& v) {
  if (v == "inf") return std::numeric_limits<double>::infinity();
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': not a number: '" + v + "'");
  }
}

inline std::int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long long x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': not an integer: '" + v + "'");
  }
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const unsigned long long x = std::stoull(v, &pos, 0);
    if (pos != v.size() || (!v.empty() && v[0] == '-')) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': not an unsigned integer: '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + key + "': expected true or false, got '" + v + "'");
}

inline std::vector<double> parse_real_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_real(key, item));
  if (out.empty()) throw ConfigError("key '" + key + "': empty list");
  return out;
}

// ---------------------------------------------------------------------------
// Run configuration.

struct Config {
  WorldSeed seed = 1;
  int d = 2;
  double p = 0.0;
  double lambda = 1.0;
  Coord half_side = 50;

  std::optional<double> stop_time;
  std::optional<std::size_t> stop_max_occupied;
  std::string stop_boundary = "none";  // none, any, fpp1, fpplambda
  bool quiescence = true;

  std::string overrides;  // path, empty for none
  std::vector<Site> extra_seeds;

  AnalysisParams analysis;
  std::string theta_hat = "1";  // a number, or "auto"
  std::size_t theta_reps = 200;
  Coord theta_half = 50;

  int render_bands = 6;
  bool render = false;  // simulate also writes render.ppm (d = 2)

  std::vector<double> p_values;
  std::vector<double> lambda_values;
  std::size_t replicas = 1;
  int parallel = 1;

  std::string estimator = "theta";  // theta, filled_reach, crossing_pc
  Coord M = 50;
  std::size_t reps = 100;

  // Keys in the order they were given; echoed verbatim into manifests.
  std::vector<std::pair<std::string, std::string>> entries;

  StopCondition stop_condition() const {
    StopCondition s;
    s.time_horizon = stop_time;
    s.max_occupied = stop_max_occupied;
    s.quiescence = quiescence;
    if (stop_boundary == "any") s.first_boundary_hit_by = Process::none;
    if (stop_boundary == "fpp1") s.first_boundary_hit_by = Process::fpp1;
    if (stop_boundary == "fpplambda") s.first_boundary_hit_by = Process::fpplambda;
    return s;
  }

  Window window() const { return Window(d, half_side); }

  SeedField seed_field() const {
    SeedField f(p, seed);
    for (const auto& s : extra_seeds) f = f.with_extra_seed(s);
    return f;
  }

  PassageTimeField time_field(const std::string& base_dir = "") const {
    PassageTimeField f(lambda, seed);
    if (!overrides.empty()) {
      std::filesystem::path op(overrides);
      if (op.is_relative() && !base_dir.empty()) op = std::filesystem::path(base_dir) / op;
      load_overrides(f, op.string());
    }
    return f;
  }

  std::string text() const {
    std::string out = "config_version=1\n";
    for (const auto& [k, v] : entries) out += k + "=" + v + "\n";
    return out;
  }
};

inline std::vector<Site> parse_site_list(const std::string& key, const std::string& v, int d) {
  std::vector<Site> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ';')) {
    if (item.empty()) continue;
    Site s;
    std::stringstream is(item);
    std::string c;
    while (std::getline(is, c, ',')) s.push_back(parse_int(key, c));
    if (static_cast<int>(s.size()) != d) throw ConfigError("key '" + key + "': site '" + item + "' has wrong dimension");
    out.push_back(s);
  }
  return out;
}

inline void apply_key(Config& c, const std::string& k, const std::string& v) {
  auto& a = c.analysis;
  if (k == "seed") c.seed = parse_u64(k, v);
  else if (k == "d") c.d = static_cast<int>(parse_int(k, v));
  else if (k == "p") c.p = parse_real(k, v);
  else if (k == "lambda") c.lambda = parse_real(k, v);
  else if (k == "half_side") c.half_side = parse_int(k, v);
  else if (k == "stop_time") c.stop_time = parse_real(k, v);
  else if (k == "stop_max_occupied") c.stop_max_occupied = parse_u64(k, v);
  else if (k == "stop_boundary") {
    if (v != "none" && v != "any" && v != "fpp1" && v != "fpplambda")
      throw ConfigError("key 'stop_boundary': expected none, any, fpp1 or fpplambda");
    c.stop_boundary = v;
  } else if (k == "quiescence") c.quiescence = parse_bool(k, v);
  else if (k == "overrides") c.overrides = v;
  else if (k == "extra_seeds") c.extra_seeds = parse_site_list(k, v, c.d);
  else if (k == "epsilon") a.epsilon = parse_real(k, v);
  else if (k == "c1") a.c1 = parse_real(k, v);
  else if (k == "c2") a.c2 = parse_real(k, v);
  else if (k == "A") a.A = parse_real(k, v);
  else if (k == "C") a.C = parse_real(k, v);
  else if (k == "L1") a.L1 = parse_int(k, v);
  else if (k == "k_max") a.k_max = static_cast<int>(parse_int(k, v));
  else if (k.size() == 2 && k[0] == 'a' && k[1] >= '2' && k[1] <= '9') a.a[static_cast<std::size_t>(k[1] - '2')] = parse_real(k, v);
  else if (k == "lambda_bar") a.lambda_bar = parse_real(k, v);
  else if (k == "sigma") a.sigma_override = parse_real(k, v);
  else if (k == "enable_e6") a.enable_e6 = parse_bool(k, v);
  else if (k == "exact_pair_limit") a.exact_pair_limit = parse_u64(k, v);
  else if (k == "sample_sources") a.sample_sources = parse_u64(k, v);
  else if (k == "sample_targets") a.sample_targets = parse_u64(k, v);
  else if (k == "short_circuit") a.short_circuit = parse_bool(k, v);
  else if (k == "theta_hat") {
    if (v != "auto") a.theta_hat = parse_real(k, v);
    c.theta_hat = v;
  } else if (k == "theta_reps") c.theta_reps = parse_u64(k, v);
  else if (k == "theta_half") c.theta_half = parse_int(k, v);
  else if (k == "render") c.render = parse_bool(k, v);
  else if (k == "render_bands") c.render_bands = static_cast<int>(parse_int(k, v));
  else if (k == "p_values") c.p_values = parse_real_list(k, v);
  else if (k == "lambda_values") c.lambda_values = parse_real_list(k, v);
  else if (k == "replicas") c.replicas = parse_u64(k, v);
  else if (k == "parallel") c.parallel = static_cast<int>(parse_int(k, v));
  else if (k == "estimator") {
    if (v != "theta" && v != "filled_reach" && v != "crossing_pc")
      throw ConfigError("key 'estimator': expected theta, filled_reach or crossing_pc");
    c.estimator = v;
  } else if (k == "M") c.M = parse_int(k, v);
  else if (k == "reps") c.reps = parse_u64(k, v);
  else throw ConfigError("unknown configuration key '" + k + "'");
}

inline void validate(const Config& c) {
  if (c.d < 2) throw ConfigError("d must be >= 2");
  if (!(c.p >= 0 && c.p <= 1)) throw ConfigError("p must lie in [0,1]");
  if (!(c.lambda > 0) || !std::isfinite(c.lambda)) throw ConfigError("lambda must be positive and finite");
  if (c.half_side < 0) throw ConfigError("half_side must be >= 0");
  if (c.render_bands < 1) throw ConfigError("render_bands must be >= 1");
  if (c.replicas < 1) throw ConfigError("replicas must be >= 1");
  if (c.parallel < 1) throw ConfigError("parallel must be >= 1");
  for (const auto& s : c.extra_seeds)
    if (static_cast<int>(s.size()) != c.d) throw ConfigError("extra_seeds: wrong dimension");
  if (c.stop_time && !(*c.stop_time >= 0)) throw ConfigError("stop_time must be >= 0");
}

inline Config parse_config(std::istream& in) {
  Config c;
  std::string line;
  std::size_t lineno = 0;
  bool version_seen = false;
  std::map<std::string, std::string> seen;
  std::vector<std::pair<std::string, std::string>> pending;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      const auto b = s.find_last_not_of(" \t");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string k = trim(line.substr(0, eq));
    const std::string v = trim(line.substr(eq + 1));
    if (!version_seen) {
      if (k != "config_version") throw ConfigError("config must start with config_version=1");
      if (v != "1") throw ConfigError("unsupported config_version '" + v + "'");
      version_seen = true;
      continue;
    }
    if (seen.count(k)) throw ConfigError("duplicate configuration key '" + k + "'");
    seen[k] = v;
    pending.emplace_back(k, v);
  }
  if (!version_seen) throw ConfigError("config must start with config_version=1");
  // The dimension is needed before site lists can be parsed.
  if (seen.count("d")) apply_key(c, "d", seen["d"]);
  for (const auto& [k, v] : pending) apply_key(c, k, v);
  c.analysis.d = c.d;
  c.analysis.p = c.p;
  c.analysis.lambda = c.lambda;
  c.entries = pending;
  validate(c);
  return c;
}

inline Config parse_config_text(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

inline Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("can not open config file " + path);
  return parse_config(in);
}

// ---------------------------------------------------------------------------
// CSV

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::string& schema, const std::vector<std::string>& header)
      : out_(path, std::ios::binary), columns_(header.size()) {
    if (!out_) throw IoError("can not write " + path);
    out_ << "# fpphe-csv " << schema << " v1\n";
    for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
    out_ << "\n";
  }

  CsvWriter& cell(const std::string& s) {
    if (n_++) out_ << ',';
    out_ << s;
    return *this;
  }
  CsvWriter& cell(double v) { return cell(fmt_real(v)); }
  CsvWriter& cell(std::int64_t v) { return cell(std::to_string(v)); }
  CsvWriter& cell(std::size_t v) { return cell(std::to_string(v)); }
  CsvWriter& cell(int v) { return cell(std::to_string(v)); }

  void end_row() {
    if (n_ != columns_) throw IoError("csv row has " + std::to_string(n_) + " cells, expected " + std::to_string(columns_));
    out_ << '\n';
    n_ = 0;
  }

  void close() {
    out_.close();
    if (!out_) throw IoError("csv write failed");
  }

 private:
  std::ofstream out_;
  std::size_t columns_;
  std::size_t n_ = 0;
};

struct CsvTable {
  std::string schema;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw IoError("csv has no column " + name);
    return static_cast<std::size_t>(it - header.begin());
  }
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("can not read " + path);
  CsvTable t;
  std::string line;
  auto split = [](const std::string& l) {
    std::vector<std::string> out;
    std::stringstream ss(l);
    std::string c;
    while (std::getline(ss, c, ',')) out.push_back(c);
    return out;
  };
  if (!std::getline(in, line) || line.rfind("# fpphe-csv ", 0) != 0) throw IoError(path + ": missing schema line");
  t.schema = line.substr(12);
  if (!std::getline(in, line)) throw IoError(path + ": missing header");
  t.header = split(line);
  while (std::getline(in, line))
    if (!line.empty()) t.rows.push_back(split(line));
  return t;
}

inline std::vector<std::string> coord_columns(int d) {
  std::vector<std::string> out;
  for (int a = 0; a < d; ++a) out.push_back("x" + std::to_string(a));
  return out;
}

inline void write_sites_csv(const std::string& path, const RunResult& r) {
  auto header = coord_columns(r.window.dim());
  for (const char* h : {"state", "tau", "activated_by", "parent_dir"}) header.push_back(h);
  CsvWriter w(path, "sites", header);
  const int d = r.window.dim();
  Site s(static_cast<std::size_t>(d));
  for (std::size_t i = 0; i < r.state.size(); ++i) {
    r.window.coords_of(i, s);
    for (Coord c : s) w.cell(static_cast<std::int64_t>(c));
    w.cell(static_cast<int>(r.state[i])).cell(r.tau[i]).cell(to_string(static_cast<Process>(r.activated_by[i])));
    // Direction to the conquering neighbour: +a+1 / -(a+1), 0 when absent.
    int dir = 0;
    if (r.parent[i] >= 0) {
      const Site ps = r.window.site_of(static_cast<std::size_t>(r.parent[i]));
      for (int a = 0; a < d; ++a)
        if (ps[a] != s[a]) dir = ps[a] > s[a] ? a + 1 : -(a + 1);
    }
    w.cell(dir);
    w.end_row();
  }
  w.close();
}

inline void write_summary_csv(const std::string& path, const RunResult& r) {
  CsvWriter w(path, "summary",
              {"sites", "seed", "empty", "fpp1", "fpplambda", "stop_reason", "last_event_time", "events",
               "first_boundary_hit", "fpp1_reached_boundary"});
  w.cell(r.state.size()).cell(r.n_seed).cell(r.n_empty).cell(r.n_fpp1).cell(r.n_fpplambda);
  w.cell(to_string(r.stop_reason)).cell(r.last_event_time).cell(r.events_processed);
  w.cell(r.first_boundary_time().value_or(std::numeric_limits<double>::quiet_NaN()));
  w.cell(r.reached_boundary(Process::fpp1) ? 1 : 0);
  w.end_row();
  w.close();
}

inline void write_box_reports_csv(const std::string& path, MultiscaleAnalysis& an, const std::vector<BoxIndex>& boxes) {
  const int d = an.params().d;
  std::vector<std::string> header{"k"};
  for (int a = 0; a < d; ++a) header.push_back("i" + std::to_string(a));
  for (const char* h : {"good", "E1", "E2", "E3", "E4", "E5", "E6", "bad_subboxes", "determinate", "feedback", "tau",
                        "entry_site", "parent", "progenitor"})
    header.push_back(h);
  CsvWriter w(path, "boxes", header);
  auto idx_str = [](const std::vector<Coord>& i) {
    std::string s;
    for (std::size_t a = 0; a < i.size(); ++a) s += (a ? " " : "") + std::to_string(i[a]);
    return s;
  };
  for (const auto& b : boxes) {
    const BoxReport& r = an.analyze(b);
    w.cell(b.k);
    for (Coord c : b.i) w.cell(static_cast<std::int64_t>(c));
    w.cell(r.good ? 1 : 0);
    for (const auto& f : r.flags) w.cell(f ? (*f ? "1" : "0") : "");
    w.cell(r.bad_subbox_count ? std::to_string(*r.bad_subbox_count) : "");
    w.cell(r.determinate ? 1 : 0);
    w.cell(to_string(r.feedback));
    w.cell(r.entrance ? r.entrance->time : std::numeric_limits<double>::quiet_NaN());
    w.cell(r.entrance ? idx_str(r.entrance->site) : "");
    w.cell(r.parent ? idx_str(r.parent->i) : "");
    std::string pg;
    if (r.determinate && r.feedback != Feedback::positive && r.in_window) {
      auto p = an.progenitor(b);
      if (p) pg = std::to_string(p->k) + ":" + idx_str(p->i);
    }
    w.cell(pg);
    w.end_row();
  }
  w.close();
}

inline void write_violations_csv(const std::string& path, const PropertyReport& rep) {
  CsvWriter w(path, "violations", {"property", "kind", "k", "index"});
  for (const auto& [name, pv] : rep.by_property) {
    auto row = [&](const char* kind, const BoxIndex& b) {
      std::string s;
      for (std::size_t a = 0; a < b.i.size(); ++a) s += (a ? " " : "") + std::to_string(b.i[a]);
      w.cell(name).cell(kind).cell(b.k).cell(s);
      w.end_row();
    };
    for (const auto& b : pv.violations) row("violation", b);
    for (const auto& b : pv.indeterminate) row("indeterminate", b);
  }
  w.close();
}

inline void write_property_summary_csv(const std::string& path, const PropertyReport& rep) {
  CsvWriter w(path, "properties", {"property", "checked", "violations", "indeterminate"});
  for (const auto& [name, pv] : rep.by_property) {
    w.cell(name).cell(pv.checked).cell(pv.violations.size()).cell(pv.indeterminate.size());
    w.end_row();
  }
  w.close();
}

// ---------------------------------------------------------------------------
// Binary snapshot: the run result plus everything needed to rebuild the fields.
//   "FPPHESNP" u32 version | config text | overrides | run arrays
// Native byte order; snapshots are meant for the platform that wrote them.

namespace detail {

template <typename T>
void put(std::ostream& o, const T& v) {
  o.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& i) {
  T v{};
  i.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!i) throw IoError("snapshot truncated");
  return v;
}

inline void put_str(std::ostream& o, const std::string& s) {
  put<std::uint64_t>(o, s.size());
  o.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_str(std::istream& i) {
  const auto n = get<std::uint64_t>(i);
  if (n > (1ULL << 32)) throw IoError("snapshot string too long");
  std::string s(n, '\0');
  i.read(s.data(), static_cast<std::streamsize>(n));
  if (!i) throw IoError("snapshot truncated");
  return s;
}

template <typename T>
void put_vec(std::ostream& o, const std::vector<T>& v) {
  put<std::uint64_t>(o, v.size());
  o.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
}

template <typename T>
std::vector<T> get_vec(std::istream& i, std::uint64_t expect) {
  const auto n = get<std::uint64_t>(i);
  if (n != expect) throw IoError("snapshot array size mismatch");
  std::vector<T> v(n);
  i.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
  if (!i) throw IoError("snapshot truncated");
  return v;
}

}  // namespace detail

inline constexpr char kSnapshotMagic[8] = {'F', 'P', 'P', 'H', 'E', 'S', 'N', 'P'};

struct Snapshot {
  std::string config_text;
  std::vector<std::pair<Edge, TimePair>> overrides;
  RunResult run;

  Config config() const { return parse_config_text(config_text); }

  SeedField seed_field() const { return config().seed_field(); }

  PassageTimeField time_field() const {
    const Config c = config();
    PassageTimeField f(c.lambda, c.seed);
    for (const auto& [e, t] : overrides) f.set_override(e, t);
    return f;
  }
};

inline void write_snapshot(const std::string& path, const Snapshot& s) {
  std::ofstream o(path, std::ios::binary);
  if (!o) throw IoError("can not write " + path);
  o.write(kSnapshotMagic, 8);
  detail::put<std::uint32_t>(o, 1);
  detail::put_str(o, s.config_text);
  const RunResult& r = s.run;
  const int d = r.window.dim();
  detail::put<std::uint32_t>(o, static_cast<std::uint32_t>(d));
  // Overrides in canonical order so the bytes do not depend on hash-map layout.
  auto ov = s.overrides;
  std::sort(ov.begin(), ov.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  detail::put<std::uint64_t>(o, ov.size());
  for (const auto& [e, t] : ov) {
    for (Coord c : e.lo) detail::put<std::int64_t>(o, c);
    detail::put<std::int32_t>(o, e.axis);
    detail::put<double>(o, t.t1);
    detail::put<double>(o, t.tlambda);
  }
  detail::put<std::int64_t>(o, r.window.half_side());
  detail::put_vec(o, r.state);
  detail::put_vec(o, r.tau);
  detail::put_vec(o, r.activated_by);
  detail::put_vec(o, r.parent);
  detail::put<std::uint64_t>(o, r.boundary_hits.size());
  for (const auto& h : r.boundary_hits) {
    detail::put<double>(o, h.time);
    for (Coord c : h.site) detail::put<std::int64_t>(o, c);
    detail::put<std::int8_t>(o, static_cast<std::int8_t>(h.process));
  }
  detail::put<std::int8_t>(o, static_cast<std::int8_t>(r.stop_reason));
  detail::put<double>(o, r.last_event_time);
  detail::put<std::uint64_t>(o, r.events_processed);
  o.close();
  if (!o) throw IoError("snapshot write failed: " + path);
}

inline Snapshot read_snapshot(const std::string& path) {
  std::ifstream i(path, std::ios::binary);
  if (!i) throw IoError("can not read " + path);
  char magic[8];
  i.read(magic, 8);
  if (!i || std::memcmp(magic, kSnapshotMagic, 8) != 0) throw IoError(path + ": not a snapshot");
  if (detail::get<std::uint32_t>(i) != 1) throw IoError(path + ": unsupported snapshot version");
  Snapshot s;
  s.config_text = detail::get_str(i);
  const int d = static_cast<int>(detail::get<std::uint32_t>(i));
  const auto nov = detail::get<std::uint64_t>(i);
  for (std::uint64_t k = 0; k < nov; ++k) {
    Edge e;
    e.lo.resize(static_cast<std::size_t>(d));
    for (auto& c : e.lo) c = detail::get<std::int64_t>(i);
    e.axis = detail::get<std::int32_t>(i);
    TimePair t;
    t.t1 = detail::get<double>(i);
    t.tlambda = detail::get<double>(i);
    s.overrides.emplace_back(e, t);
  }
  RunResult& r = s.run;
  r.window = Window(d, detail::get<std::int64_t>(i));
  const std::uint64_t n = r.window.site_count();
  r.state = detail::get_vec<std::int8_t>(i, n);
  r.tau = detail::get_vec<double>(i, n);
  r.activated_by = detail::get_vec<std::int8_t>(i, n);
  r.parent = detail::get_vec<std::int64_t>(i, n);
  const auto nh = detail::get<std::uint64_t>(i);
  for (std::uint64_t k = 0; k < nh; ++k) {
    BoundaryHit h;
    h.time = detail::get<double>(i);
    h.site.resize(static_cast<std::size_t>(d));
    for (auto& c : h.site) c = detail::get<std::int64_t>(i);
    h.process = static_cast<Process>(detail::get<std::int8_t>(i));
    r.boundary_hits.push_back(h);
  }
  r.stop_reason = static_cast<StopReason>(detail::get<std::int8_t>(i));
  r.last_event_time = detail::get<double>(i);
  r.events_processed = detail::get<std::uint64_t>(i);
  for (auto st : r.state) {
    switch (st) {
      case -1: ++r.n_seed; break;
      case 0: ++r.n_empty; break;
      case 1: ++r.n_fpp1; break;
      case 2: ++r.n_fpplambda; break;
      default: throw IoError(path + ": corrupt site state");
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Digests and manifests.

inline std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("can not read " + path);
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::array<char, 1 << 16> buf;
  while (in) {
    in.read(buf.data(), buf.size());
    EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int k = 0; k < len; ++k) {
    out += hex[md[k] >> 4];
    out += hex[md[k] & 15];
  }
  return out;
}

// manifest_version=1, then "key=value" lines; config lines are prefixed with
// "config." and outputs with "output.".
struct Manifest {
  std::string tool_version = kToolVersion;
  std::string command;
  std::vector<std::pair<std::string, std::string>> inputs;   // name -> path or digest
  std::vector<std::pair<std::string, std::string>> info;     // provenance notes
  std::string config_text;
  std::vector<std::pair<std::string, std::string>> outputs;  // file name -> sha256

  std::string input(const std::string& k) const {
    for (const auto& [a, b] : inputs)
      if (a == k) return b;
    return "";
  }
};

inline void write_manifest(const std::string& path, const Manifest& m) {
  std::ofstream o(path, std::ios::binary);
  if (!o) throw IoError("can not write " + path);
  o << "manifest_version=1\n";
  o << "tool_version=" << m.tool_version << "\n";
  o << "command=" << m.command << "\n";
  for (const auto& [k, v] : m.inputs) o << "input." << k << "=" << v << "\n";
  for (const auto& [k, v] : m.info) o << "info." << k << "=" << v << "\n";
  std::istringstream cfg(m.config_text);
  std::string line;
  while (std::getline(cfg, line))
    if (!line.empty()) o << "config." << line << "\n";
  for (const auto& [k, v] : m.outputs) o << "output." << k << "=" << v << "\n";
  o.close();
  if (!o) throw IoError("manifest write failed");
}

inline Manifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("can not read manifest " + path);
  Manifest m;
  std::string line;
  if (!std::getline(in, line) || line != "manifest_version=1") throw IoError(path + ": not a version 1 manifest");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError(path + ": malformed line");
    const std::string k = line.substr(0, eq), v = line.substr(eq + 1);
    if (k == "tool_version") m.tool_version = v;
    else if (k == "command") m.command = v;
    else if (k.rfind("input.", 0) == 0) m.inputs.emplace_back(k.substr(6), v);
    else if (k.rfind("info.", 0) == 0) m.info.emplace_back(k.substr(5), v);
    else if (k.rfind("config.", 0) == 0) m.config_text += k.substr(7) + "=" + v + "\n";
    else if (k.rfind("output.", 0) == 0) m.outputs.emplace_back(k.substr(7), v);
    else throw IoError(path + ": unknown manifest key " + k);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Rendering: FPP1 sites by entrance-time quantile band, FPPlambda white,
// everything else light gray. Row 0 of the image is the largest x1.

struct Rgb {
  unsigned char r, g, b;
};

inline Rgb band_color(int band, int bands) {
  static const Rgb palette[] = {{49, 54, 149},  {69, 117, 180}, {116, 173, 209}, {171, 217, 233},
                                {254, 224, 144}, {253, 174, 97}, {244, 109, 67},  {215, 48, 39},
                                {165, 0, 38},    {0, 104, 55},   {102, 189, 99},  {217, 239, 139}};
  constexpr int n = sizeof(palette) / sizeof(palette[0]);
  if (bands <= n) return palette[(band * (n / std::max(1, bands))) % n];
  return palette[band % n];
}

inline void render_ppm(const std::string& path, const RunResult& r, int bands) {
  if (r.window.dim() != 2) throw DomainError("render supports d = 2 only");
  if (bands < 1) throw ConfigError("band count must be >= 1");
  std::vector<double> times;
  for (std::size_t i = 0; i < r.state.size(); ++i)
    if (r.state[i] == 1) times.push_back(r.tau[i]);
  std::sort(times.begin(), times.end());
  const Coord side = r.window.side();
  std::ofstream o(path, std::ios::binary);
  if (!o) throw IoError("can not write " + path);
  o << "P6\n" << side << " " << side << "\n255\n";
  const Coord h = r.window.half_side();
  Site s(2);
  for (Coord row = 0; row < side; ++row) {
    for (Coord col = 0; col < side; ++col) {
      s[0] = col - h;
      s[1] = h - row;
      const std::size_t i = r.window.index_of(s);
      Rgb c{211, 211, 211};
      if (r.state[i] == 2) {
        c = {255, 255, 255};
      } else if (r.state[i] == 1) {
        // Band from the rank of the first site with the same time.
        const auto rank = static_cast<std::size_t>(std::lower_bound(times.begin(), times.end(), r.tau[i]) - times.begin());
        c = band_color(static_cast<int>(rank * static_cast<std::size_t>(bands) / times.size()), bands);
      }
      o.put(static_cast<char>(c.r)).put(static_cast<char>(c.g)).put(static_cast<char>(c.b));
    }
  }
  o.close();
  if (!o) throw IoError("image write failed: " + path);
}

}  // namespace fpphe
