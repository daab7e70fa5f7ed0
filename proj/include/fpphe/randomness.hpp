#pragma once

// Stateless randomness for the seed field and both passage-time families.
// Every value is a pure function of (world seed, purpose tag, lattice key),
// so any finite window sees the restriction of one infinite assignment.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>

#include "fpphe/lattice.hpp"

namespace fpphe {

using WorldSeed = std::uint64_t;

enum class StreamTag : std::uint64_t {
  seed = 0x5eed5eed00000001ULL,
  t1 = 0x7100000000000002ULL,
  tlambda = 0x71a0000000000003ULL,
  sampling = 0x5a3b1e0000000004ULL,
  replica = 0x4e91ca0000000005ULL,
};

enum class Rate { one, lambda };

inline constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t keyed_hash(WorldSeed world, StreamTag tag, std::span<const Coord> key,
                                std::uint64_t extra = 0) {
  std::uint64_t h = mix64(world ^ mix64(static_cast<std::uint64_t>(tag)));
  for (Coord c : key) h = mix64(h ^ static_cast<std::uint64_t>(c));
  return mix64(h ^ (extra + 0x632be59bd9b4e019ULL));
}

// Uniform in [0,1) on the 2^-53 grid.
inline double to_unit(std::uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

// Uniform in (0,1) on the midpoints of the 2^-52 grid; both ends are excluded
// exactly, so -log1p(-u) is finite and positive.
inline double to_open_unit(std::uint64_t h) { return (static_cast<double>(h >> 12) + 0.5) * 0x1.0p-52; }

inline double exponential_from_hash(std::uint64_t h, double rate) { return -std::log1p(-to_open_unit(h)) / rate; }

// ---------------------------------------------------------------------------

class SeedField {
 public:
  SeedField() = default;
  SeedField(double p, WorldSeed world) : p_(p), world_(world) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("seed density p must lie in [0,1]");
  }

  double p() const { return p_; }
  WorldSeed world() const { return world_; }
  const std::set<Site>& forced() const { return forced_; }

  bool is_seed(std::span<const Coord> s) const {
    bool origin = true;
    for (Coord c : s) origin = origin && c == 0;
    if (origin) return false;
    if (!forced_.empty() && forced_.count(Site(s.begin(), s.end()))) return true;
    return to_unit(keyed_hash(world_, StreamTag::seed, s)) < p_;
  }

  SeedField with_extra_seed(const Site& s) const {
    bool origin = true;
    for (Coord c : s) origin = origin && c == 0;
    if (origin) throw DomainError("the origin can not host a seed");
    SeedField out = *this;
    out.forced_.insert(s);
    return out;
  }

 private:
  double p_ = 0.0;
  WorldSeed world_ = 0;
  std::set<Site> forced_;
};

struct TimePair {
  double t1 = 1.0;
  double tlambda = 1.0;
};

class PassageTimeField {
 public:
  PassageTimeField() = default;
  PassageTimeField(double lambda, WorldSeed world) : lambda_(lambda), world_(world) {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be a positive finite rate");
  }

  double lambda() const { return lambda_; }
  WorldSeed world() const { return world_; }
  const std::unordered_map<Edge, TimePair, EdgeHash>& overrides() const { return overrides_; }
  bool has_overrides() const { return !overrides_.empty(); }

  double time(const Edge& e, Rate r) const {
    if (!overrides_.empty()) {
      auto it = overrides_.find(e);
      if (it != overrides_.end()) return r == Rate::one ? it->second.t1 : it->second.tlambda;
    }
    return sampled(e, r);
  }

  double time(std::span<const Coord> lo, int axis, Rate r) const {
    if (!overrides_.empty()) return time(Edge{Site(lo.begin(), lo.end()), axis}, r);
    return sampled(lo, axis, r);
  }

  double sampled(const Edge& e, Rate r) const { return sampled(e.lo, e.axis, r); }

  double sampled(std::span<const Coord> lo, int axis, Rate r) const {
    const StreamTag tag = r == Rate::one ? StreamTag::t1 : StreamTag::tlambda;
    return exponential_from_hash(keyed_hash(world_, tag, lo, static_cast<std::uint64_t>(axis)),
                                 r == Rate::one ? 1.0 : lambda_);
  }

  void set_override(const Edge& e, TimePair t) {
    if (!(t.t1 > 0.0) || !(t.tlambda > 0.0) || !std::isfinite(t.t1) || !std::isfinite(t.tlambda)) {
      throw ConfigError("override passage times must be positive and finite");
    }
    overrides_[e] = t;
  }

  // Fills every edge of the range with the same pair; existing overrides are replaced.
  void set_uniform_overrides(const SiteRange& r, TimePair t) {
    r.for_each([&](const Site& s) {
      for (int a = 0; a < r.dim(); ++a) {
        if (s[a] < r.last(a)) set_override(Edge{s, a}, t);
      }
    });
  }

 private:
  double lambda_ = 1.0;
  WorldSeed world_ = 0;
  std::unordered_map<Edge, TimePair, EdgeHash> overrides_;
};

// Override file:
//   # fpphe-overrides 1
//   d <dimension>
//   <x_1 .. x_d> <y_1 .. y_d> <t1> <tlambda>
// Blank lines and further '#' lines are ignored.
inline std::unordered_map<Edge, TimePair, EdgeHash> parse_overrides(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("# fpphe-overrides 1", 0) != 0) {
    throw ConfigError("override file must start with '# fpphe-overrides 1'");
  }
  int d = 0;
  std::unordered_map<Edge, TimePair, EdgeHash> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    if (d == 0) {
      std::string key;
      ls >> key >> d;
      if (key != "d" || d < 2) throw ConfigError("override file: expected 'd <dimension>' before edges");
      continue;
    }
    Site a(static_cast<std::size_t>(d)), b(static_cast<std::size_t>(d));
    TimePair t;
    for (auto& c : a) ls >> c;
    for (auto& c : b) ls >> c;
    ls >> t.t1 >> t.tlambda;
    if (!ls) throw ConfigError("override file: malformed line " + std::to_string(lineno));
    if (!(t.t1 > 0.0) || !(t.tlambda > 0.0)) {
      throw ConfigError("override file: non-positive time on line " + std::to_string(lineno));
    }
    out[make_edge(a, b)] = t;
  }
  return out;
}

inline void load_overrides(PassageTimeField& f, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("can not open override file " + path);
  for (auto& [e, t] : parse_overrides(in)) f.set_override(e, t);
}

}  // namespace fpphe
