// Searches small windows for an instance where one extra seed strictly
// increases the final FPP1 count, then writes it out with every passage time
// pinned by an override file.
//
// For each window size (smallest first), each p and lambda of the grid and each
// world seed, every non-seed site other than the origin is tried as the extra
// seed. The first hit is written.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fpphe/engine.hpp"
#include "fpphe/io.hpp"

using namespace fpphe;

namespace {

struct Hit {
  Coord half = 0;
  double p = 0, lambda = 0;
  WorldSeed world = 0;
  std::vector<Site> seeds;
  Site extra;
  std::size_t before = 0, after = 0;
};

SeedField forced_field(const std::vector<Site>& seeds) {
  SeedField f(0.0, 0);
  for (const auto& s : seeds) f = f.with_extra_seed(s);
  return f;
}

void write_instance(const std::string& dir, const Hit& h) {
  std::filesystem::create_directories(dir);
  const Window w(2, h.half);
  const PassageTimeField times(h.lambda, h.world);
  {
    std::ofstream o(dir + "/overrides.txt");
    o << "# fpphe-overrides 1\nd 2\n";
    window_range(w).for_each([&](const Site& s) {
      for (int a = 0; a < 2; ++a) {
        if (s[a] == h.half) continue;
        Site t = s;
        ++t[a];
        o << s[0] << " " << s[1] << " " << t[0] << " " << t[1] << " " << fmt_real(times.sampled(s, a, Rate::one)) << " "
          << fmt_real(times.sampled(s, a, Rate::lambda)) << "\n";
      }
    });
  }
  auto seeds_text = [](const std::vector<Site>& v) {
    std::string s;
    for (const auto& x : v) s += (s.empty() ? "" : ";") + std::to_string(x[0]) + "," + std::to_string(x[1]);
    return s;
  };
  auto write_cfg = [&](const std::string& name, const std::vector<Site>& seeds) {
    std::ofstream o(dir + "/" + name);
    o << "config_version=1\nseed=" << h.world << "\np=0\nlambda=" << fmt_real(h.lambda) << "\nhalf_side=" << h.half
      << "\noverrides=overrides.txt\n";
    if (!seeds.empty()) o << "extra_seeds=" << seeds_text(seeds) << "\n";
  };
  write_cfg("base.cfg", h.seeds);
  std::vector<Site> more = h.seeds;
  more.push_back(h.extra);
  write_cfg("extended.cfg", more);
  std::ofstream o(dir + "/README.txt");
  o << "Non-monotone instance: one extra seed increases the final FPP1 count.\n"
    << "window " << 2 * h.half + 1 << "x" << 2 * h.half + 1 << ", search cell p=" << h.p << " lambda=" << h.lambda
    << " world=" << h.world << "\n"
    << "extra seed at (" << h.extra[0] << "," << h.extra[1] << ")\n"
    << "final FPP1 count: " << h.before << " without, " << h.after << " with the extra seed\n"
    << "base.cfg / extended.cfg differ only in that seed; every passage time is pinned in overrides.txt.\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Exhaustive search for a seed-addition non-monotonicity instance"};
  std::string out = "fixtures/nonmonotone";
  Coord max_half = 4;
  WorldSeed worlds = 500;
  std::vector<double> ps{0.1, 0.2, 0.3};
  std::vector<double> lambdas{0.5, 1.0, 2.0};
  app.add_option("--out", out, "Output directory");
  app.add_option("--max-half", max_half, "Largest window half-side (4 gives 9x9)")->check(CLI::Range(1, 4));
  app.add_option("--worlds", worlds, "World seeds per cell");
  app.add_option("--p", ps, "Seed densities");
  app.add_option("--lambda", lambdas, "FPPlambda rates");
  CLI11_PARSE(app, argc, argv);

  std::size_t tried = 0;
  for (Coord half = 1; half <= max_half; ++half) {
    const Window w(2, half);
    for (double p : ps) {
      for (double lambda : lambdas) {
        for (WorldSeed world = 0; world < worlds; ++world) {
          const SeedField sampled(p, world);
          std::vector<Site> seeds;
          window_range(w).for_each([&](const Site& s) {
            if (sampled.is_seed(s)) seeds.push_back(s);
          });
          const SeedField base = forced_field(seeds);
          if (base.is_seed(w.origin())) continue;
          const PassageTimeField times(lambda, world);
          const std::size_t before = simulate(w, base, times).n_fpp1;
          Hit best;
          window_range(w).for_each([&](const Site& s) {
            if (best.after || base.is_seed(s) || s == w.origin()) return;
            ++tried;
            const std::size_t after = simulate(w, base.with_extra_seed(s), times).n_fpp1;
            if (after > before) best = Hit{half, p, lambda, world, seeds, s, before, after};
          });
          if (best.after) {
            write_instance(out, best);
            std::cout << "found after " << tried << " trials: window " << 2 * half + 1 << ", p=" << p
                      << " lambda=" << lambda << " world=" << world << ", extra seed (" << best.extra[0] << ","
                      << best.extra[1] << "), FPP1 " << before << " -> " << best.after << "\n";
            return 0;
          }
        }
      }
    }
  }
  std::cout << "no instance found in " << tried << " trials\n";
  return 1;
}
