// fpphe: simulate, sweep, classify, estimate, render, replay.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fpphe/cli.hpp"

namespace {

using namespace fpphe;
using namespace fpphe::cli;

struct Flags {
  std::string config, out_dir, snapshot, manifest, estimator, bands;
  std::string seed, parallel, stop_time, stop_max_occupied, stop_boundary, stop_quiescence;
  std::vector<std::string> params;  // key=value
};

// Pulls "--params-KEY VALUE" and "--params-KEY=VALUE" out of argv; CLI11 has no
// wildcard option names.
Edits extract_param_flags(std::vector<std::string>& args) {
  Edits out;
  std::vector<std::string> keep;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.rfind("--params-", 0) != 0) {
      keep.push_back(a);
      continue;
    }
    std::string rest = a.substr(9);
    const auto eq = rest.find('=');
    if (eq != std::string::npos) {
      out.emplace_back(rest.substr(0, eq), rest.substr(eq + 1));
    } else {
      if (i + 1 >= args.size()) throw ConfigError("option " + a + " needs a value");
      out.emplace_back(rest, args[++i]);
    }
  }
  args = keep;
  return out;
}

Edits flag_edits(const Flags& f, Edits params) {
  Edits e;
  for (const auto& kv : f.params) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--param expects key=value, got '" + kv + "'");
    e.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
  }
  e.insert(e.end(), params.begin(), params.end());
  auto add = [&](const char* k, const std::string& v) {
    if (!v.empty()) e.emplace_back(k, v);
  };
  add("seed", f.seed);
  add("parallel", f.parallel);
  add("stop_time", f.stop_time);
  add("stop_max_occupied", f.stop_max_occupied);
  add("stop_boundary", f.stop_boundary);
  add("quiescence", f.stop_quiescence);
  add("estimator", f.estimator);
  add("render_bands", f.bands);
  return e;
}

void add_run_flags(CLI::App* sub, Flags& f) {
  sub->add_option("--seed", f.seed, "World seed");
  sub->add_option("--stop-time", f.stop_time, "Time horizon");
  sub->add_option("--stop-max-occupied", f.stop_max_occupied, "Stop after this many occupied sites");
  sub->add_option("--stop-boundary", f.stop_boundary, "Stop at first boundary hit: none, any, fpp1, fpplambda");
  sub->add_option("--stop-quiescence", f.stop_quiescence, "Stop when no events remain (true/false)");
}

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--out-dir", f.out_dir, "Output directory (overrides FPPHE_OUT_DIR)");
  sub->add_option("--param", f.params, "Config override key=value (repeatable); --params-KEY VALUE also works");
}

std::string config_text_with(const Flags& f, const Edits& edits) {
  return edit_config_text(parse_config_text(read_text(f.config)).text(), edits);
}

void print_outputs(const fs::path& out, const Manifest& m) {
  std::cout << "wrote " << (out / "manifest.txt").string() << " (" << m.outputs.size() << " outputs)\n";
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  Edits params;
  try {
    params = extract_param_flags(args);
  } catch (const std::exception& e) {
    std::cerr << "fpphe: " << e.what() << "\n";
    return exit_usage;
  }

  CLI::App app{"First passage percolation in a hostile environment"};
  app.require_subcommand(1);
  Flags f;

  auto* sim = app.add_subcommand("simulate", "Single run: snapshot, site CSV, summary, manifest");
  sim->add_option("--config", f.config, "Config file")->required()->check(CLI::ExistingFile);
  add_run_flags(sim, f);
  add_common(sim, f);

  auto* sweep = app.add_subcommand("sweep", "(p, lambda) grid with replicas; resumable");
  sweep->add_option("--config", f.config, "Config file with p_values, lambda_values, replicas")
      ->required()
      ->check(CLI::ExistingFile);
  sweep->add_option("--parallel", f.parallel, "Worker threads per cell");
  add_run_flags(sweep, f);
  add_common(sweep, f);

  auto* cls = app.add_subcommand("classify", "Box reports and property checks for a snapshot");
  cls->add_option("--snapshot", f.snapshot, "Snapshot written by simulate")->required()->check(CLI::ExistingFile);
  cls->add_option("--config", f.config, "Analysis parameters")->check(CLI::ExistingFile);
  add_common(cls, f);

  auto* est = app.add_subcommand("estimate", "Percolation estimators: theta, filled_reach, crossing_pc");
  est->add_option("--config", f.config, "Config file")->required()->check(CLI::ExistingFile);
  est->add_option("--estimator", f.estimator, "theta, filled_reach or crossing_pc");
  est->add_option("--seed", f.seed, "Base seed");
  add_common(est, f);

  auto* ren = app.add_subcommand("render", "PPM image of a 2-dimensional snapshot");
  ren->add_option("--snapshot", f.snapshot, "Snapshot written by simulate")->required()->check(CLI::ExistingFile);
  ren->add_option("--bands", f.bands, "Number of entrance-time bands");
  add_common(ren, f);

  auto* rep = app.add_subcommand("replay", "Re-run a manifest and compare output digests");
  rep->add_option("--manifest", f.manifest, "manifest.txt")->required()->check(CLI::ExistingFile);
  rep->add_option("--out-dir", f.out_dir, "Output directory for the replay (overrides FPPHE_OUT_DIR)");

  std::vector<char*> cargv{argv[0]};
  for (auto& a : args) cargv.push_back(a.data());
  try {
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? exit_ok : exit_usage;
  }

  try {
    const fs::path out = resolve_out_dir(f.out_dir);
    const Edits edits = flag_edits(f, params);
    if (sim->parsed()) {
      const Manifest m = cmd_simulate(config_text_with(f, edits), fs::path(f.config).parent_path(), out);
      print_outputs(out, m);
    } else if (sweep->parsed()) {
      const SweepResult r = cmd_sweep(config_text_with(f, edits), out);
      std::size_t incomplete = 0;
      for (const auto& c : r.cells) {
        if (!c.complete) {
          ++incomplete;
          std::cerr << "fpphe: cell p=" << fmt_real(c.p) << " lambda=" << fmt_real(c.lambda) << " incomplete: " << c.error
                    << "\n";
        }
      }
      std::cout << "cells: " << r.cells.size() << " computed: " << r.computed << " resumed: "
                << r.cells.size() - r.computed - incomplete << " incomplete: " << incomplete << "\n";
      print_outputs(out, r.manifest);
      if (incomplete) return exit_runtime;
    } else if (cls->parsed() || ren->parsed()) {
      Edits all;
      if (!f.config.empty()) all = config_entries(read_text(f.config));
      all.insert(all.end(), edits.begin(), edits.end());
      const Manifest m = cls->parsed() ? cmd_classify(f.snapshot, all, out) : cmd_render(f.snapshot, all, out);
      print_outputs(out, m);
    } else if (est->parsed()) {
      const Manifest m = cmd_estimate(config_text_with(f, edits), out);
      print_outputs(out, m);
      std::cout << read_text(out / "estimate.csv");
    } else if (rep->parsed()) {
      const ReplayReport r = cmd_replay(f.manifest, out);
      for (const auto& name : r.mismatched) std::cerr << "fpphe: output differs: " << name << "\n";
      if (!r.ok()) return exit_mismatch;
      std::cout << "replay matches: " << r.fresh.outputs.size() << " outputs\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "fpphe: config error: " << e.what() << "\n";
    return exit_usage;
  } catch (const ReplayMismatch& e) {
    std::cerr << "fpphe: " << e.what() << "\n";
    return exit_mismatch;
  } catch (const std::exception& e) {
    std::cerr << "fpphe: " << e.what() << "\n";
    return exit_runtime;
  }
  return exit_ok;
}
