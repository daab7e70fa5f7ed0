#pragma once

// Command implementations behind the fpphe tool. Every command writes its
// outputs plus manifest.txt into an output directory; replay re-runs a
// manifest into a fresh directory and compares output digests.

#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fpphe/engine.hpp"
#include "fpphe/io.hpp"
#include "fpphe/multiscale.hpp"
#include "fpphe/percolation.hpp"

namespace fpphe::cli {

namespace fs = std::filesystem;

enum ExitCode : int { exit_ok = 0, exit_usage = 1, exit_runtime = 2, exit_mismatch = 3 };

class ReplayMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Edits = std::vector<std::pair<std::string, std::string>>;

inline const std::set<std::string>& simulation_keys() {
  static const std::set<std::string> keys{"seed",     "d",          "p",         "lambda",
                                          "half_side", "stop_time", "stop_max_occupied",
                                          "stop_boundary", "quiescence", "overrides", "extra_seeds"};
  return keys;
}

// Replaces or appends keys, keeping the original order; the result is re-validated.
inline std::string edit_config_text(const std::string& text, const Edits& edits) {
  const Config c = parse_config_text(text);
  auto entries = c.entries;
  for (const auto& [k, v] : edits) {
    auto it = std::find_if(entries.begin(), entries.end(), [&](const auto& e) { return e.first == k; });
    if (it != entries.end()) it->second = v;
    else entries.emplace_back(k, v);
  }
  std::string out = "config_version=1\n";
  for (const auto& [k, v] : entries) out += k + "=" + v + "\n";
  parse_config_text(out);
  return out;
}

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("can not read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline fs::path resolve_out_dir(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("FPPHE_OUT_DIR"); env && *env) return env;
  return "fpphe_out";
}

// Copies src to dst unless they are the same file.
inline void copy_input(const fs::path& src, const fs::path& dst) {
  if (!fs::exists(src)) throw IoError("missing input " + src.string());
  if (fs::exists(dst) && fs::equivalent(src, dst)) return;
  fs::copy_file(src, dst, fs::copy_options::overwrite_existing);
}

inline void finish_manifest(Manifest& m, const fs::path& out, const std::vector<std::string>& files) {
  for (const auto& f : files) m.outputs.emplace_back(f, sha256_file((out / f).string()));
  write_manifest((out / "manifest.txt").string(), m);
}

inline std::vector<std::pair<Edge, TimePair>> sorted_overrides(const PassageTimeField& f) {
  std::vector<std::pair<Edge, TimePair>> v(f.overrides().begin(), f.overrides().end());
  std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  return v;
}

// ---------------------------------------------------------------------------
// simulate

inline Manifest cmd_simulate(const std::string& config_text, const fs::path& base_dir, const fs::path& out) {
  fs::create_directories(out);
  Config cfg = parse_config_text(config_text);
  std::string text = cfg.text();
  Manifest m;
  m.command = "simulate";
  std::vector<std::string> files;
  if (!cfg.overrides.empty()) {
    fs::path src(cfg.overrides);
    if (src.is_relative()) src = base_dir / src;
    copy_input(src, out / "overrides.txt");
    text = edit_config_text(text, {{"overrides", "overrides.txt"}});
    cfg = parse_config_text(text);
    m.inputs.emplace_back("overrides_sha256", sha256_file((out / "overrides.txt").string()));
  }
  const PassageTimeField times = cfg.time_field(out.string());
  const RunResult r = simulate(cfg.window(), cfg.seed_field(), times, cfg.stop_condition());
  write_snapshot((out / "run.snap").string(), Snapshot{text, sorted_overrides(times), r});
  write_sites_csv((out / "sites.csv").string(), r);
  write_summary_csv((out / "summary.csv").string(), r);
  files = {"run.snap", "sites.csv", "summary.csv"};
  if (cfg.render) {
    render_ppm((out / "render.ppm").string(), r, cfg.render_bands);
    files.push_back("render.ppm");
  }
  m.config_text = text;
  finish_manifest(m, out, files);
  return m;
}

// ---------------------------------------------------------------------------
// sweep

struct ReplicaOutcome {
  WorldSeed seed = 0;
  bool reached = false;
  double fpp1_density = 0;
  double fpplambda_density = 0;
  std::string stop_reason;
};

struct CellSummary {
  double p = 0, lambda = 0;
  std::size_t replicas = 0;
  bool complete = false;
  double reach = NAN, reach_ci = NAN;
  double fpp1 = NAN, fpp1_ci = NAN;
  double fpplambda = NAN, fpplambda_ci = NAN;
  std::size_t reached = 0;
  std::string error;
};

inline WorldSeed sweep_replica_seed(WorldSeed master, std::size_t ip, std::size_t il, std::size_t replica) {
  const Coord key[2] = {static_cast<Coord>(ip), static_cast<Coord>(il)};
  return keyed_hash(master, StreamTag::replica, key, replica);
}

inline ReplicaOutcome run_replica(const Config& cfg, double p, double lambda, WorldSeed seed) {
  SeedField seeds(p, seed);
  for (const auto& s : cfg.extra_seeds) seeds = seeds.with_extra_seed(s);
  const PassageTimeField times(lambda, seed);
  const Window w(cfg.d, cfg.half_side);
  const RunResult r = simulate(w, seeds, times, cfg.stop_condition());
  ReplicaOutcome o;
  o.seed = seed;
  o.reached = r.reached_boundary(Process::fpp1);
  o.fpp1_density = static_cast<double>(r.n_fpp1) / static_cast<double>(r.state.size());
  o.fpplambda_density = static_cast<double>(r.n_fpplambda) / static_cast<double>(r.state.size());
  o.stop_reason = to_string(r.stop_reason);
  return o;
}

// Replicas of one cell, spread over `parallel` threads; the output order is by replica.
inline std::vector<ReplicaOutcome> run_cell(const Config& cfg, std::size_t ip, std::size_t il, double p, double lambda,
                                            int parallel) {
  std::vector<ReplicaOutcome> out(cfg.replicas);
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  auto worker = [&] {
    for (std::size_t r; (r = next.fetch_add(1)) < cfg.replicas;) {
      try {
        out[r] = run_replica(cfg, p, lambda, sweep_replica_seed(cfg.seed, ip, il, r));
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_mu);
        if (!err) err = std::current_exception();
      }
    }
  };
  const int n = std::max(1, std::min<int>(parallel, static_cast<int>(cfg.replicas)));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (err) std::rethrow_exception(err);
  return out;
}

inline CellSummary summarize_cell(double p, double lambda, const std::vector<ReplicaOutcome>& reps) {
  CellSummary c;
  c.p = p;
  c.lambda = lambda;
  c.replicas = reps.size();
  c.complete = true;
  const double n = static_cast<double>(reps.size());
  auto mean_ci = [&](auto get, double& mean, double& ci) {
    double s = 0;
    for (const auto& r : reps) s += get(r);
    mean = s / n;
    double ss = 0;
    for (const auto& r : reps) ss += (get(r) - mean) * (get(r) - mean);
    ci = reps.size() > 1 ? 1.96 * std::sqrt(ss / (n - 1) / n) : 0.0;
  };
  for (const auto& r : reps) c.reached += r.reached;
  c.reach = static_cast<double>(c.reached) / n;
  c.reach_ci = 1.96 * std::sqrt(c.reach * (1 - c.reach) / n);
  mean_ci([](const ReplicaOutcome& r) { return r.fpp1_density; }, c.fpp1, c.fpp1_ci);
  mean_ci([](const ReplicaOutcome& r) { return r.fpplambda_density; }, c.fpplambda, c.fpplambda_ci);
  return c;
}

inline void write_replicas_csv(const fs::path& path, const std::vector<ReplicaOutcome>& reps) {
  CsvWriter w(path.string(), "sweep-replicas",
              {"replica", "seed", "fpp1_reached_boundary", "fpp1_density", "fpplambda_density", "stop_reason"});
  for (std::size_t r = 0; r < reps.size(); ++r) {
    w.cell(r).cell(std::to_string(reps[r].seed)).cell(reps[r].reached ? 1 : 0);
    w.cell(reps[r].fpp1_density).cell(reps[r].fpplambda_density).cell(reps[r].stop_reason);
    w.end_row();
  }
  w.close();
}

inline std::vector<ReplicaOutcome> read_replicas_csv(const fs::path& path) {
  const CsvTable t = read_csv(path.string());
  if (t.schema != "sweep-replicas v1") throw IoError(path.string() + ": unexpected schema");
  std::vector<ReplicaOutcome> out;
  for (const auto& row : t.rows) {
    if (row.size() != t.header.size()) throw IoError(path.string() + ": ragged row");
    ReplicaOutcome o;
    o.seed = std::stoull(row[1]);
    o.reached = row[2] == "1";
    o.fpp1_density = std::stod(row[3]);
    o.fpplambda_density = std::stod(row[4]);
    o.stop_reason = row[5];
    out.push_back(o);
  }
  return out;
}

inline std::string cell_dir_name(std::size_t ip, std::size_t il) {
  return "cells/p" + std::to_string(ip) + "_l" + std::to_string(il);
}

struct SweepResult {
  std::vector<CellSummary> cells;
  std::size_t computed = 0;  // cells run in this call (the rest were resumed)
  Manifest manifest;
};

inline SweepResult cmd_sweep(const std::string& config_text, const fs::path& out) {
  const Config cfg = parse_config_text(config_text);
  if (!cfg.overrides.empty()) throw ConfigError("sweep does not take an overrides file");
  const std::vector<double> ps = cfg.p_values.empty() ? std::vector<double>{cfg.p} : cfg.p_values;
  const std::vector<double> ls = cfg.lambda_values.empty() ? std::vector<double>{cfg.lambda} : cfg.lambda_values;
  for (double p : ps)
    if (!(p >= 0 && p <= 1)) throw ConfigError("p_values must lie in [0,1]");
  for (double l : ls)
    if (!(l > 0) || !std::isfinite(l)) throw ConfigError("lambda_values must be positive and finite");
  fs::create_directories(out / "cells");
  SweepResult res;
  res.manifest.command = "sweep";
  res.manifest.config_text = cfg.text();
  std::vector<std::string> files;
  for (std::size_t ip = 0; ip < ps.size(); ++ip) {
    for (std::size_t il = 0; il < ls.size(); ++il) {
      const fs::path dir = out / cell_dir_name(ip, il);
      const std::string rel = cell_dir_name(ip, il) + "/replicas.csv";
      CellSummary cs;
      try {
        std::vector<ReplicaOutcome> reps;
        if (fs::exists(dir / "done") && fs::exists(dir / "replicas.csv")) {
          reps = read_replicas_csv(dir / "replicas.csv");
          if (reps.size() != cfg.replicas) throw IoError(rel + ": replica count differs from the config");
        } else {
          fs::create_directories(dir);
          fs::remove(dir / "done");
          reps = run_cell(cfg, ip, il, ps[ip], ls[il], cfg.parallel);
          write_replicas_csv(dir / "replicas.csv", reps);
          std::ofstream(dir / "done") << "complete\n";
          ++res.computed;
        }
        cs = summarize_cell(ps[ip], ls[il], reps);
        files.push_back(rel);
      } catch (const std::exception& e) {
        cs = CellSummary{};
        cs.p = ps[ip];
        cs.lambda = ls[il];
        cs.replicas = cfg.replicas;
        cs.error = e.what();
      }
      res.cells.push_back(cs);
    }
  }
  CsvWriter w((out / "sweep.csv").string(), "sweep",
              {"p", "lambda", "replicas", "complete", "fpp1_reach_fraction", "fpp1_reach_ci95", "mean_fpp1_density",
               "fpp1_density_ci95", "mean_fpplambda_density", "fpplambda_density_ci95"});
  for (const auto& c : res.cells) {
    w.cell(c.p).cell(c.lambda).cell(c.replicas).cell(c.complete ? 1 : 0);
    w.cell(c.reach).cell(c.reach_ci).cell(c.fpp1).cell(c.fpp1_ci).cell(c.fpplambda).cell(c.fpplambda_ci);
    w.end_row();
  }
  w.close();
  files.insert(files.begin(), "sweep.csv");
  finish_manifest(res.manifest, out, files);
  return res;
}

// ---------------------------------------------------------------------------
// Commands that read a snapshot: the effective config is the snapshot's own
// config with the given edits applied; simulation keys may not change.

inline std::string snapshot_config(const Snapshot& snap, const Edits& edits) {
  const Config base = snap.config();
  std::map<std::string, std::string> have(base.entries.begin(), base.entries.end());
  for (const auto& [k, v] : edits) {
    if (!simulation_keys().count(k)) continue;
    auto it = have.find(k);
    if (it == have.end() || it->second != v)
      throw ConfigError("key '" + k + "' is fixed by the snapshot and can not be changed here");
  }
  return edit_config_text(snap.config_text, edits);
}

inline Edits config_entries(const std::string& text) {
  // Accepts a partial config (analysis keys only) as well as a full one.
  return parse_config_text(text).entries;
}

struct ThetaChoice {
  double value = 1.0;
  std::string provenance;
};

inline ThetaChoice choose_theta(const Config& cfg) {
  ThetaChoice t;
  if (cfg.theta_hat != "auto") {
    t.value = cfg.analysis.theta_hat;
    t.provenance = "configured";
    return t;
  }
  const WorldSeed base = keyed_hash(cfg.seed, StreamTag::sampling, std::span<const Coord>{}, 0x7e7a);
  const Estimate e = theta_estimate(cfg.p, cfg.theta_half, cfg.theta_reps, base, cfg.d);
  t.value = e.value;
  std::ostringstream ss;
  ss << "origin non-seed cluster reaches window boundary; half_side=" << cfg.theta_half << " reps=" << cfg.theta_reps
     << " successes=" << e.successes << " stderr=" << fmt_real(e.stderr_);
  t.provenance = ss.str();
  return t;
}

inline Manifest cmd_classify(const fs::path& snapshot, const Edits& edits, const fs::path& out) {
  fs::create_directories(out);
  copy_input(snapshot, out / "input.snap");
  const Snapshot snap = read_snapshot((out / "input.snap").string());
  const std::string text = snapshot_config(snap, edits);
  Config cfg = parse_config_text(text);
  const ThetaChoice th = choose_theta(cfg);
  cfg.analysis.theta_hat = th.value;

  Manifest m;
  m.command = "classify";
  m.config_text = text;
  m.inputs.emplace_back("snapshot", "input.snap");
  m.inputs.emplace_back("snapshot_sha256", sha256_file((out / "input.snap").string()));
  m.info.emplace_back("theta_hat", fmt_real(th.value));
  m.info.emplace_back("theta_hat_source", th.provenance);

  MultiscaleAnalysis an(snap.seed_field(), snap.time_field(), cfg.analysis, &snap.run);
  std::vector<std::string> files;
  for (int k = 1; k <= cfg.analysis.k_max; ++k) {
    std::vector<BoxIndex> boxes;
    an.boxes_in_window(k).for_each([&](const Index& i) { boxes.push_back({k, i}); });
    const std::string name = "boxes_k" + std::to_string(k) + ".csv";
    write_box_reports_csv((out / name).string(), an, boxes);
    files.push_back(name);
  }
  const PropertyReport rep = an.check_properties();
  write_property_summary_csv((out / "properties.csv").string(), rep);
  write_violations_csv((out / "violations.csv").string(), rep);
  {
    const ConstantsTable ct = an.constants();
    CsvWriter w((out / "constants.csv").string(), "constants", {"k", "L_k", "r_k", "omega_k"});
    for (int k = 1; k <= cfg.analysis.k_max; ++k) {
      w.cell(k).cell(an.scales().length(k).str()).cell(ct.r_k(k)).cell(ct.omega_k(k));
      w.end_row();
    }
    w.close();
    m.info.emplace_back("sigma", fmt_real(ct.sigma));
  }
  files.insert(files.end(), {"properties.csv", "violations.csv", "constants.csv"});
  finish_manifest(m, out, files);
  return m;
}

inline Manifest cmd_render(const fs::path& snapshot, const Edits& edits, const fs::path& out) {
  fs::create_directories(out);
  copy_input(snapshot, out / "input.snap");
  const Snapshot snap = read_snapshot((out / "input.snap").string());
  const std::string text = snapshot_config(snap, edits);
  const Config cfg = parse_config_text(text);
  render_ppm((out / "render.ppm").string(), snap.run, cfg.render_bands);
  Manifest m;
  m.command = "render";
  m.config_text = text;
  m.inputs.emplace_back("snapshot", "input.snap");
  m.inputs.emplace_back("snapshot_sha256", sha256_file((out / "input.snap").string()));
  finish_manifest(m, out, {"render.ppm"});
  return m;
}

// ---------------------------------------------------------------------------
// estimate

inline Manifest cmd_estimate(const std::string& config_text, const fs::path& out) {
  fs::create_directories(out);
  const Config cfg = parse_config_text(config_text);
  if (cfg.M < 1) throw ConfigError("M must be >= 1");
  if (cfg.reps < 1) throw ConfigError("reps must be >= 1");
  CsvWriter w((out / "estimate.csv").string(), "estimate",
              {"estimator", "d", "p", "M", "reps", "value", "stderr", "successes"});
  w.cell(cfg.estimator).cell(cfg.d).cell(cfg.p).cell(static_cast<std::int64_t>(cfg.M)).cell(cfg.reps);
  if (cfg.estimator == "theta") {
    const Estimate e = theta_estimate(cfg.p, cfg.M, cfg.reps, cfg.seed, cfg.d);
    w.cell(e.value).cell(e.stderr_).cell(e.successes);
  } else if (cfg.estimator == "filled_reach") {
    const Estimate e = filled_reach_probability(cfg.p, cfg.M, cfg.reps, cfg.seed, cfg.d);
    w.cell(e.value).cell(e.stderr_).cell(e.successes);
  } else {
    if (cfg.d != 2) throw DomainError("crossing_pc supports d = 2 only");
    const CrossingEstimate e = crossing_pc_estimate(cfg.M, cfg.reps, cfg.seed);
    w.cell(e.pc).cell(e.stderr_).cell("");
  }
  w.end_row();
  w.close();
  Manifest m;
  m.command = "estimate";
  m.config_text = cfg.text();
  finish_manifest(m, out, {"estimate.csv"});
  return m;
}

// ---------------------------------------------------------------------------
// replay

struct ReplayReport {
  std::vector<std::string> mismatched;  // outputs whose digests differ or are missing
  Manifest fresh;
  bool ok() const { return mismatched.empty(); }
};

inline void check_input(const Manifest& m, const std::string& key, const fs::path& file) {
  const std::string want = m.input(key);
  if (want.empty()) return;
  if (!fs::exists(file)) throw ReplayMismatch("replay input missing: " + file.string());
  if (sha256_file(file.string()) != want) throw ReplayMismatch("replay input changed: " + file.string());
}

inline ReplayReport cmd_replay(const fs::path& manifest_path, const fs::path& out) {
  const Manifest m = read_manifest(manifest_path.string());
  const fs::path dir = manifest_path.parent_path().empty() ? fs::path(".") : manifest_path.parent_path();
  fs::create_directories(out);
  if (fs::equivalent(dir, out)) throw ConfigError("replay needs an output directory other than the manifest's");
  ReplayReport rep;
  if (m.command == "simulate") {
    check_input(m, "overrides_sha256", dir / "overrides.txt");
    rep.fresh = cmd_simulate(m.config_text, dir, out);
  } else if (m.command == "sweep") {
    // A resumed directory would hide recomputation; start clean.
    fs::remove_all(out / "cells");
    rep.fresh = cmd_sweep(m.config_text, out).manifest;
  } else if (m.command == "classify" || m.command == "render") {
    const fs::path snap = dir / m.input("snapshot");
    check_input(m, "snapshot_sha256", snap);
    const Edits edits = config_entries(m.config_text);
    rep.fresh = m.command == "classify" ? cmd_classify(snap, edits, out) : cmd_render(snap, edits, out);
  } else if (m.command == "estimate") {
    rep.fresh = cmd_estimate(m.config_text, out);
  } else {
    throw ConfigError("manifest has unknown command '" + m.command + "'");
  }
  std::map<std::string, std::string> now(rep.fresh.outputs.begin(), rep.fresh.outputs.end());
  for (const auto& [f, digest] : m.outputs) {
    auto it = now.find(f);
    if (it == now.end() || it->second != digest) rep.mismatched.push_back(f);
  }
  return rep;
}

}  // namespace fpphe::cli
