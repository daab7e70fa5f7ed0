#pragma once

// Multi-scale classification of a finished realization: goodness at every
// scale, clusters and wonderful boxes, feedback labels, parent and progenitor
// links, the derived constants, and empirical checks of the structural
// properties (CAS, Prog, Fast, Del, Conf).
//
// Box determinacy: a box is determinate when it lies inside the window, was
// entered, and was entered strictly before the first boundary hit of the run.
// Only determinate boxes receive feedback labels and parents.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fpphe/engine.hpp"
#include "fpphe/lattice.hpp"
#include "fpphe/percolation.hpp"
#include "fpphe/randomness.hpp"

namespace fpphe {

using Index = std::vector<Coord>;

struct AnalysisParams {
  int d = 2;
  double p = 0.0;
  double lambda = 1.0;
  double epsilon = 0.1;
  double c1 = 5.0;
  double c2 = 5.0;
  double A = 3.0;
  double C = 1.0;
  Coord L1 = 30;
  int k_max = 1;
  std::array<double, 8> a{1, 1, 1, 1, 1, 1, 1, 1};  // a2..a9
  double lambda_bar = std::numeric_limits<double>::infinity();
  std::optional<double> sigma_override;
  bool enable_e6 = false;
  double theta_hat = 1.0;
  std::size_t exact_pair_limit = 5000;
  std::size_t sample_sources = 100;
  std::size_t sample_targets = 100;
  // Stop evaluating scale-1 events at the first failure (flags after it stay unknown).
  bool short_circuit = false;

  double a_n(int n) const { return a.at(static_cast<std::size_t>(n - 2)); }

  void validate() const {
    if (d < 2) throw ConfigError("d must be >= 2");
    if (!(epsilon > 0 && epsilon < 1)) throw ConfigError("epsilon must lie in (0,1)");
    if (!(c1 >= 1)) throw ConfigError("c1 must be >= 1");
    if (!(c2 > 1)) throw ConfigError("c2 must be > 1");
    if (!(A > d)) throw ConfigError("A must exceed d");
    if (!(C > 0)) throw ConfigError("C must be positive");
    if (k_max < 1) throw ConfigError("k_max must be >= 1");
    if (sigma_override && !(*sigma_override > 0)) throw ConfigError("sigma must be positive");
  }

  Scale1Params scale1() const {
    Scale1Params s;
    s.epsilon = epsilon;
    s.c1 = c1;
    s.c2 = c2;
    s.theta_hat = theta_hat;
    s.exact_pair_limit = exact_pair_limit;
    s.sample_sources = sample_sources;
    s.sample_targets = sample_targets;
    return s;
  }
};

enum class Feedback : std::int8_t { none = 0, positive = 1, negative = 2 };

inline const char* to_string(Feedback f) {
  switch (f) {
    case Feedback::none: return "none";
    case Feedback::positive: return "positive";
    case Feedback::negative: return "negative";
  }
  return "?";
}

enum class CountMethod : std::int8_t { exact, greedy_bad, reduced_exact, greedy_only };

struct BoxReport {
  BoxIndex idx;
  bool in_window = true;
  bool good = false;
  std::array<std::optional<bool>, 6> flags{};  // E1..E6 at scale 1
  std::optional<int> bad_subbox_count;         // scale >= 2
  CountMethod count_method = CountMethod::exact;
  std::optional<BoxEntrance> entrance;
  bool determinate = false;
  Feedback feedback = Feedback::none;
  std::optional<BoxIndex> parent;
  std::optional<BoxIndex> progenitor;
  std::string progenitor_note;
};

struct Cluster {
  std::vector<Index> members;
  std::vector<Index> outer_boundary;
  bool boundary_kind = false;
  bool meets_inner_part = false;
  std::optional<bool> poorly_confined;  // absent when a boundary box lacks a label
  std::optional<BoxIndex> source;
};

struct ClusterStructure {
  BoxIndex box;
  std::vector<Cluster> clusters;
  std::set<Index> clustered;      // union of all cluster members
  std::set<Index> wonderful_inner;
  bool wonderful_inner_connected = true;

  std::optional<std::size_t> cluster_of(const Index& j) const {
    for (std::size_t c = 0; c < clusters.size(); ++c)
      if (std::find(clusters[c].members.begin(), clusters[c].members.end(), j) != clusters[c].members.end()) return c;
    return std::nullopt;
  }
};

struct ConstantsTable {
  int d = 2;
  double r1 = 0;
  double sigma = 1;
  double a1 = 0;
  double C0 = 0;
  std::vector<double> r;      // r[k-1] = r_k
  std::vector<double> omega;  // omega[k-1] = omega_k
  std::vector<double> zeta_j;    // zeta_j[j-1] = zeta_j
  std::vector<double> zeta_gap;  // 1 - zeta_j, kept separately since zeta_j rounds to 1 quickly
  double zeta = 1;
  double r_limit = 0;
  double omega_limit = 1;
  double lambda_bar = std::numeric_limits<double>::infinity();
  double L1 = 0;

  double r_k(int k) const { return r.at(static_cast<std::size_t>(k - 1)); }
  double omega_k(int k) const { return omega.at(static_cast<std::size_t>(k - 1)); }
  double lambda_x(double x) const { return std::min(lambda_bar, 1.0 / ((x + r1) * (x + r1) * L1 * L1)); }
  bool r_bound_holds() const { return r_limit < 2 * r1; }
  bool omega_bound_holds() const { return omega_limit > 0.5; }
};

inline double length_pow(const BigInt& L, int e) {
  const double l = static_cast<double>(L);
  return std::pow(l, e);
}

// Products are evaluated until the factors round to 1; the scale lengths grow
// so fast that this takes only a handful of terms.
inline ConstantsTable constants_table(const AnalysisParams& prm, double sigma, int k_table = 0) {
  ConstantsTable t;
  t.d = prm.d;
  t.r1 = fact_r1(prm.d, prm.c2);
  t.sigma = sigma;
  t.a1 = 1000.0 * prm.A * sigma / 3.0;
  t.C0 = 8.0 * sigma * t.r1 * prm.a_n(3);
  t.lambda_bar = prm.lambda_bar;
  t.L1 = static_cast<double>(prm.L1);
  const int kt = std::max({k_table, prm.k_max, 3});
  const int kfull = 12;
  const auto L = scale_lengths(prm.L1, prm.d, kfull);
  const double a2 = prm.a_n(2);
  t.r.push_back(t.r1);
  t.omega.push_back(1.0);
  for (int k = 2; k <= kfull; ++k) {
    const double m = static_cast<double>(k) * k * length_pow(L[static_cast<std::size_t>(k - 2)], prm.d - 1);
    t.r.push_back(t.r.back() * (1.0 + t.a1 / m));
    t.omega.push_back(t.omega.back() * (1.0 - a2 / m));
  }
  t.r_limit = t.r.back();
  t.omega_limit = t.omega.back();
  t.r.resize(static_cast<std::size_t>(kt));
  t.omega.resize(static_cast<std::size_t>(kt));
  for (int j = 1; j <= kfull; ++j) {
    const double den = std::pow(static_cast<double>(j + 1), 2 * prm.d) *
                       length_pow(L[static_cast<std::size_t>(j - 1)], prm.d * (prm.d - 1));
    t.zeta_gap.push_back(prm.A * sigma / den);
    t.zeta_j.push_back(1.0 - t.zeta_gap.back());
  }
  for (double z : t.zeta_j) t.zeta *= z;
  t.zeta_j.resize(static_cast<std::size_t>(kt));
  t.zeta_gap.resize(static_cast<std::size_t>(kt));
  return t;
}

inline double density_lower_bound(double theta_hat, double epsilon, double zeta, int d) {
  return std::pow(3.0, -d) * zeta * (1.0 - epsilon) * theta_hat;
}

// ---------------------------------------------------------------------------
// Maximum number of pairwise disjoint boxes among bad boxes at one scale.
// Closed boxes of one scale are disjoint iff their indices differ by more
// than 3 in sup-norm.

namespace detail {

inline int mis_rec(const std::vector<std::uint64_t>& adj, std::uint64_t P, int cur, int& best, int cap) {
  if (best >= cap) return best;
  if (P == 0) {
    best = std::max(best, cur);
    return best;
  }
  if (cur + std::popcount(P) <= best) return best;
  const int v = std::countr_zero(P);
  const std::uint64_t nv = adj[static_cast<std::size_t>(v)] & P;
  mis_rec(adj, P & ~nv & ~(1ULL << v), cur + 1, best, cap);
  if (nv != 0) mis_rec(adj, P & ~(1ULL << v), cur, best, cap);
  return best;
}

// Exact for up to 64 vertices; stops once cap is reached.
inline int exact_mis(const std::vector<Index>& pts, int cap) {
  const std::size_t n = pts.size();
  if (n == 0) return 0;
  std::vector<std::uint64_t> adj(n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && linf_distance(pts[i], pts[j]) <= 3) adj[i] |= 1ULL << j;
  int best = 0;
  const std::uint64_t all = n == 64 ? ~0ULL : ((1ULL << n) - 1);
  mis_rec(adj, all, 0, best, cap);
  return best;
}

inline int greedy_mis(const std::vector<Index>& pts) {
  std::vector<Index> chosen;
  for (const auto& p : pts) {
    bool ok = true;
    for (const auto& c : chosen) ok = ok && linf_distance(p, c) > 3;
    if (ok) chosen.push_back(p);
  }
  return static_cast<int>(chosen.size());
}

}  // namespace detail

struct DisjointCount {
  int count = 0;
  CountMethod method = CountMethod::exact;
  bool exact = true;
};

// Returns the exact maximum when it is at most A, and otherwise a value above A.
inline DisjointCount max_disjoint_bad(std::vector<Index> bad, double A) {
  std::sort(bad.begin(), bad.end());
  const int cap = static_cast<int>(std::floor(A)) + 1;
  if (bad.size() <= 20) return {detail::exact_mis(bad, static_cast<int>(bad.size()) + 1), CountMethod::exact, true};
  const int g = detail::greedy_mis(bad);
  if (g > A) return {g, CountMethod::greedy_bad, false};
  // Reduced instance: split the conflict graph into components and solve each.
  std::vector<int> comp(bad.size(), -1);
  int nc = 0;
  for (std::size_t s = 0; s < bad.size(); ++s) {
    if (comp[s] >= 0) continue;
    std::vector<std::size_t> q{s};
    comp[s] = nc;
    for (std::size_t h = 0; h < q.size(); ++h)
      for (std::size_t t = 0; t < bad.size(); ++t)
        if (comp[t] < 0 && linf_distance(bad[q[h]], bad[t]) <= 3) {
          comp[t] = nc;
          q.push_back(t);
        }
    ++nc;
  }
  int total = 0;
  bool exact = true;
  for (int c = 0; c < nc && total < cap; ++c) {
    std::vector<Index> part;
    for (std::size_t s = 0; s < bad.size(); ++s)
      if (comp[s] == c) part.push_back(bad[s]);
    if (part.size() <= 64) {
      total += detail::exact_mis(part, cap - total);
    } else {
      total += detail::greedy_mis(part);
      exact = false;
    }
  }
  return {total, exact ? CountMethod::reduced_exact : CountMethod::greedy_only, exact};
}


inline bool linf_connected(const std::set<Index>& s) {
  if (s.empty()) return true;
  std::set<Index> seen{*s.begin()};
  std::vector<Index> q{*s.begin()};
  const int d = static_cast<int>(s.begin()->size());
  IndexRange ring;
  ring.lo.assign(static_cast<std::size_t>(d), -1);
  ring.hi.assign(static_cast<std::size_t>(d), 1);
  for (std::size_t h = 0; h < q.size(); ++h)
    ring.for_each([&](const Index& o) {
      Index n = q[h];
      for (int a = 0; a < d; ++a) n[a] += o[a];
      if (s.count(n) && !seen.count(n)) {
        seen.insert(n);
        q.push_back(n);
      }
    });
  return seen.size() == s.size();
}

// Clusters of a k-box given the indices of its bad (k-1)-boxes: every
// sub-box meeting a bad one, plus complement pockets (nearest-neighbour
// components) that avoid the index boundary, split into sup-norm components.
inline ClusterStructure cluster_structure(const BoxIndex& idx, const ScaleTable& st, const std::vector<Index>& bad) {
  ClusterStructure cs;
  cs.box = idx;
  const int km = idx.k - 1;
  const int d = static_cast<int>(idx.i.size());
  const IndexRange R = subbox_indices(idx, st);
  std::set<Index> S;
  IndexRange off;
  off.lo.assign(static_cast<std::size_t>(d), -3);
  off.hi.assign(static_cast<std::size_t>(d), 3);
  for (const Index& b : bad) {
    if (!R.contains(b)) throw PreconditionError("bad index outside the box");
    off.for_each([&](const Index& o) {
      Index j = b;
      for (int a = 0; a < d; ++a) j[a] += o[a];
      if (R.contains(j)) S.insert(j);
    });
  }
  std::set<Index> seen;
  R.for_each([&](const Index& j) {
    if (S.empty() || S.count(j) || seen.count(j)) return;
    std::vector<Index> comp{j};
    seen.insert(j);
    bool touches = false;
    for (std::size_t h = 0; h < comp.size(); ++h) {
      const Index cur = comp[h];
      for (int a = 0; a < d; ++a)
        if (cur[a] == R.lo[a] || cur[a] == R.hi[a]) touches = true;
      for (int a = 0; a < d; ++a)
        for (int sgn : {-1, 1}) {
          Index n = cur;
          n[a] += sgn;
          if (!R.contains(n) || S.count(n) || seen.count(n)) continue;
          seen.insert(n);
          comp.push_back(n);
        }
    }
    if (!touches)
      for (auto& c : comp) S.insert(c);
  });
  IndexRange ring;
  ring.lo.assign(static_cast<std::size_t>(d), -1);
  ring.hi.assign(static_cast<std::size_t>(d), 1);
  const SiteRange qk = box_of(idx, st);
  const SiteRange qin = inner_part(idx, st);
  std::vector<AxisInterval> interior_ax;
  for (int a = 0; a < d; ++a) interior_ax.push_back({qk.first(a) + 1, qk.last(a) - 1, true, true});
  const SiteRange interior(interior_ax);
  std::set<Index> assigned;
  for (const Index& s0 : S) {
    if (assigned.count(s0)) continue;
    Cluster cl;
    std::vector<Index> q{s0};
    assigned.insert(s0);
    for (std::size_t h = 0; h < q.size(); ++h)
      ring.for_each([&](const Index& o) {
        Index n = q[h];
        for (int a = 0; a < d; ++a) n[a] += o[a];
        if (S.count(n) && !assigned.count(n)) {
          assigned.insert(n);
          q.push_back(n);
        }
      });
    std::sort(q.begin(), q.end());
    cl.members = q;
    const std::set<Index> members(q.begin(), q.end());
    std::set<Index> bd;
    for (const Index& m : q)
      ring.for_each([&](const Index& o) {
        Index n = m;
        for (int a = 0; a < d; ++a) n[a] += o[a];
        if (!members.count(n)) bd.insert(n);
      });
    cl.outer_boundary.assign(bd.begin(), bd.end());
    for (const Index& l : cl.outer_boundary) {
      const SiteRange bl = box_of({km, l}, st);
      if (bl.intersects(qk) && !interior.contains(bl)) cl.boundary_kind = true;
      if (qin.contains(bl)) cl.meets_inner_part = true;
    }
    for (const Index& m : q) cs.clustered.insert(m);
    cs.clusters.push_back(std::move(cl));
  }
  R.for_each([&](const Index& j) {
    if (!cs.clustered.count(j) && qin.contains(box_of({km, j}, st))) cs.wonderful_inner.insert(j);
  });
  for (const Cluster& cl : cs.clusters)
    if (cl.meets_inner_part)
      for (const Index& l : cl.outer_boundary) cs.wonderful_inner.insert(l);
  cs.wonderful_inner_connected = linf_connected(cs.wonderful_inner);
  return cs;
}

// ---------------------------------------------------------------------------

struct PropertyViolations {
  std::vector<BoxIndex> violations;
  std::vector<BoxIndex> indeterminate;
  std::size_t checked = 0;
};

struct PropertyReport {
  // key: property name with scale, e.g. "CAS1", "Fast2", "Conf1"
  std::map<std::string, PropertyViolations> by_property;

  std::size_t violations(const std::string& key) const {
    auto it = by_property.find(key);
    return it == by_property.end() ? 0 : it->second.violations.size();
  }
  std::size_t total_violations() const {
    std::size_t n = 0;
    for (auto& [k, v] : by_property) n += v.violations.size();
    return n;
  }
};

struct PathOfJumps {
  std::vector<std::vector<BoxIndex>> segments;  // parent paths, each ending at a progenitor
  int jumps = 0;
  bool exceeds_A = false;
  std::string end;  // "outside", "boundary-cluster", "no-cluster", "no-progenitor", "confined"
};

struct AnnulusVerdict {
  enum Kind { contained, not_contained, indeterminate } kind = indeterminate;
  std::vector<Index> annulus;  // ring of positive-feedback boxes at the requested scale
  std::string note;
};

class MultiscaleAnalysis {
 public:
  MultiscaleAnalysis(const SeedField& field, const PassageTimeField& times, const AnalysisParams& params,
                     const RunResult* run = nullptr)
      : field_(field), times_(times), prm_(params), run_(run), st_(params.L1, params.d, params.k_max) {
    prm_.validate();
    if (run_) {
      window_ = window_range(run_->window);
      hit_time_ = run_->first_boundary_time().value_or(std::numeric_limits<double>::infinity());
    }
  }

  MultiscaleAnalysis(const MultiscaleAnalysis&) = delete;
  MultiscaleAnalysis& operator=(const MultiscaleAnalysis&) = delete;

  const ScaleTable& scales() const { return st_; }
  const AnalysisParams& params() const { return prm_; }
  const RunResult* run() const { return run_; }

  bool in_window(const BoxIndex& idx) const { return !run_ || window_.contains(box_of(idx, st_)); }

  // Boxes of scale k that lie inside the window.
  IndexRange boxes_in_window(int k) const {
    if (!run_) throw PreconditionError("boxes_in_window needs a run");
    return box_indices_within(window_, k, st_);
  }

  // ---- goodness -----------------------------------------------------------

  const BoxReport& classify(const BoxIndex& idx) {
    auto it = reports_.find(idx);
    if (it != reports_.end() && it->second.classified) return it->second.r;
    Entry& e = reports_[idx];
    e.r.idx = idx;
    e.r.in_window = in_window(idx);
    if (idx.k == 1) {
      classify_scale1(e.r);
    } else {
      classify_scalek(e.r);
    }
    e.classified = true;
    return e.r;
  }

  bool is_good(const BoxIndex& idx) { return classify(idx).good; }

  Scale1Box& scale1_box(const Index& i) {
    auto it = s1_.find(i);
    if (it == s1_.end()) it = s1_.emplace(i, std::make_unique<Scale1Box>(field_, BoxIndex{1, i}, st_)).first;
    return *it->second;
  }

  // ---- entrance, feedback, parent -----------------------------------------

  const BoxReport& analyze(const BoxIndex& idx) {
    classify(idx);
    Entry& e = reports_[idx];
    if (e.dynamics_done || !run_) return e.r;
    e.dynamics_done = true;
    BoxReport& r = e.r;
    if (!r.in_window) return r;
    r.entrance = box_entrance_time(*run_, idx, st_);
    r.determinate = r.entrance && r.entrance->time < hit_time_;
    if (!r.determinate) return r;
    r.parent = BoxIndex{idx.k, core_index_containing(r.entrance->site, idx.k, st_)};
    if (r.good) r.feedback = idx.k == 1 ? feedback_scale1(idx) : feedback_scalek(idx);
    return r;
  }

  std::optional<double> entrance_time_of(const BoxIndex& idx) {
    const BoxReport& r = analyze(idx);
    if (!r.determinate) return std::nullopt;
    return r.entrance->time;
  }

  Feedback feedback_of(const BoxIndex& idx) { return analyze(idx).feedback; }

  // Positive iff some FPP1 site of C1-minus is occupied within r1 L1 of the box entrance.
  Feedback feedback_scale1(const BoxIndex& idx) {
    const BoxReport& r = reports_.at(idx).r;
    if (!r.good || !r.determinate) return Feedback::none;
    const Scale1Box& b = scale1_box(idx.i);
    const double limit = r.entrance->time + fact_r1(prm_.d, prm_.c2) * static_cast<double>(prm_.L1);
    const LocalGraph& g = b.graph();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!b.in_C1_minus(i)) continue;
      const std::size_t lin = run_->window.index_of(g.site(i));
      if (run_->state[lin] == 1 && run_->tau[lin] <= limit) return Feedback::positive;
    }
    return Feedback::negative;
  }

  // Positive iff some positive (k-1)-box of W^inn is entered before tau_{k,i} + (3/500) r_k L_k.
  Feedback feedback_scalek(const BoxIndex& idx) {
    const BoxReport& r = reports_.at(idx).r;
    if (!r.good || !r.determinate) return Feedback::none;
    const double tki = r.entrance->time;
    const ConstantsTable ct = constants();
    const double limit = tki + 3.0 / 500.0 * ct.r_k(idx.k) * st_.length_double(idx.k);
    const ClusterStructure& cs = clusters(idx);
    for (const Index& l : cs.wonderful_inner) {
      const BoxIndex sub{idx.k - 1, l};
      const BoxReport& sr = analyze(sub);
      if (sr.feedback == Feedback::positive && sr.entrance->time < limit) return Feedback::positive;
    }
    return Feedback::negative;
  }

  std::optional<BoxIndex> parent(const BoxIndex& idx) { return analyze(idx).parent; }

  // Walks parents through bad or negative boxes; returns the first whose parent is positive.
  std::optional<BoxIndex> progenitor(const BoxIndex& idx) {
    const BoxReport& r0 = analyze(idx);
    if (r0.good && r0.feedback == Feedback::positive) {
      throw PreconditionError("progenitor of a positive-feedback box is undefined");
    }
    Entry& e = reports_.at(idx);
    if (e.progenitor_done) return e.r.progenitor;
    e.progenitor_done = true;
    BoxIndex cur = idx;
    std::string note;
    std::optional<BoxIndex> out;
    for (int step = 0; step < 100000; ++step) {
      const BoxReport& cr = analyze(cur);
      if (!cr.determinate || !cr.parent) {
        note = "chain leaves the determinate region";
        break;
      }
      const BoxIndex par = *cr.parent;
      if (par == cur) {
        note = "chain reached its own-parent box without a positive parent";
        break;
      }
      const BoxReport& pr = analyze(par);
      if (!pr.in_window || !pr.determinate) {
        note = "chain exits the window";
        break;
      }
      if (pr.good && pr.feedback == Feedback::positive) {
        out = cur;
        break;
      }
      cur = par;
    }
    Entry& e2 = reports_.at(idx);
    e2.r.progenitor = out;
    e2.r.progenitor_note = out ? "" : note;
    return out;
  }

  // ---- clusters -----------------------------------------------------------

  const ClusterStructure& clusters(const BoxIndex& idx) {
    auto it = clusters_.find(idx);
    if (it != clusters_.end()) return it->second;
    if (idx.k < 2) throw PreconditionError("clusters are defined for k >= 2");
    if (!is_good(idx)) throw PreconditionError("clusters requested for a bad box");
    ClusterStructure cs = build_clusters(idx);
    return clusters_.emplace(idx, std::move(cs)).first->second;
  }

  const std::set<Index>& wonderful_inner(const BoxIndex& idx) { return clusters(idx).wonderful_inner; }

  // Earliest-entered negative box on the outer boundary; ties lexicographic.
  std::optional<BoxIndex> source_of(const Cluster& cl, int k_sub) {
    std::optional<BoxIndex> best;
    double bt = std::numeric_limits<double>::infinity();
    for (const Index& l : cl.outer_boundary) {
      const BoxIndex b{k_sub, l};
      const BoxReport& r = analyze(b);
      if (r.feedback != Feedback::negative) continue;
      if (!best || r.entrance->time < bt || (r.entrance->time == bt && l < best->i)) {
        best = b;
        bt = r.entrance->time;
      }
    }
    return best;
  }

  // Poor confinement needs labels on the whole outer boundary; absent when some are missing.
  std::optional<bool> poorly_confined(const BoxIndex& box, std::size_t c) {
    ClusterStructure& cs = clusters_.at(box);
    Cluster& cl = cs.clusters.at(c);
    if (cl.poorly_confined) return cl.poorly_confined;
    const std::set<Index> members(cl.members.begin(), cl.members.end());
    bool unknown = false;
    for (const Index& l : cl.outer_boundary) {
      const BoxIndex b{box.k - 1, l};
      const BoxReport& r = analyze(b);
      if (!r.determinate) unknown = true;
      if (r.feedback != Feedback::negative) continue;
      auto pg = progenitor(b);
      if (pg && members.count(pg->i)) {
        clusters_.at(box).clusters.at(c).poorly_confined = true;
        clusters_.at(box).clusters.at(c).source = source_of(clusters_.at(box).clusters.at(c), box.k - 1);
        return true;
      }
    }
    if (unknown) return std::nullopt;
    clusters_.at(box).clusters.at(c).poorly_confined = false;
    return false;
  }

  PathOfJumps trace_path_of_jumps(const BoxIndex& outer, const BoxIndex& start) {
    if (outer.k != start.k + 1) throw PreconditionError("trace_path_of_jumps: scales do not match");
    const BoxReport& sr = analyze(start);
    if (sr.good && sr.feedback == Feedback::positive) throw PreconditionError("start box has positive feedback");
    const ClusterStructure& cs = clusters(outer);
    const IndexRange R = subbox_indices(outer, st_);
    PathOfJumps out;
    BoxIndex cur = start;
    std::set<Index> visited_sources;
    while (true) {
      std::vector<BoxIndex> seg{cur};
      auto pg = progenitor(cur);
      if (!pg) {
        out.segments.push_back(seg);
        out.end = "no-progenitor";
        break;
      }
      BoxIndex walk = cur;
      while (!(walk == *pg)) {
        walk = *analyze(walk).parent;
        seg.push_back(walk);
      }
      out.segments.push_back(seg);
      if (!R.contains(pg->i)) {
        out.end = "outside";
        break;
      }
      auto c = cs.cluster_of(pg->i);
      if (!c) {
        out.end = "no-cluster";
        break;
      }
      if (cs.clusters[*c].boundary_kind) {
        out.end = "boundary-cluster";
        break;
      }
      auto pc = poorly_confined(outer, *c);
      if (!pc || !*pc) {
        out.end = "confined";
        break;
      }
      const auto src = clusters_.at(outer).clusters.at(*c).source;
      if (!src || visited_sources.count(src->i)) {
        out.end = "confined";
        break;
      }
      visited_sources.insert(src->i);
      ++out.jumps;
      cur = *src;
    }
    out.exceeds_A = out.jumps > prm_.A;
    return out;
  }

  // ---- sigma and constants --------------------------------------------------

  // Largest |A + outer boundary| over clusters of the good boxes analyzed so far.
  double empirical_sigma() const {
    std::size_t s = 0;
    for (const auto& [idx, cs] : clusters_)
      for (const auto& c : cs.clusters) s = std::max(s, c.members.size() + c.outer_boundary.size());
    return static_cast<double>(s);
  }

  double sigma() const {
    if (prm_.sigma_override) return *prm_.sigma_override;
    return std::max(1.0, empirical_sigma());
  }

  ConstantsTable constants() const { return constants_table(prm_, sigma()); }

  // ---- flawless sites -------------------------------------------------------

  bool flawless(std::span<const Coord> s) {
    const Index ci = core_index_containing(s, 1, st_);
    if (!scale1_box(ci).in_C1(s)) return false;
    for (int k = 2; k <= prm_.k_max; ++k) {
      for (const BoxIndex& b : boxes_containing(s, k, st_)) {
        if (run_ && !in_window(b)) continue;
        if (!is_good(b)) return false;
        const ClusterStructure& cs = clusters(b);
        for (const Index& j : cs.clustered)
          if (box_of({k - 1, j}, st_).contains(s)) return false;
      }
    }
    return true;
  }

  // ---- property checks ------------------------------------------------------

  PropertyReport check_properties() {
    if (!run_) throw PreconditionError("check_properties needs a run");
    PropertyReport rep;
    const ConstantsTable ct = constants();
    for (int k = 1; k <= prm_.k_max; ++k) {
      const IndexRange R = boxes_in_window(k);
      std::vector<BoxIndex> boxes;
      R.for_each([&](const Index& i) { boxes.push_back({k, i}); });
      for (const auto& b : boxes) analyze(b);
      check_cas(k, boxes, rep);
      check_prog(k, boxes, rep);
      check_fast(k, boxes, ct, rep);
      check_del(k, boxes, ct, rep);
      if (k < prm_.k_max) check_conf(k + 1, ct, rep);
    }
    return rep;
  }

  // ---- annulus of positive boxes ---------------------------------------------

  // Looks for a ring of positive-feedback k-boxes separating the cores that
  // contain the given sites from the boundary of the analyzed index region.
  AnnulusVerdict annulus_check(const std::vector<Site>& component, int k) {
    if (!run_) throw PreconditionError("annulus_check needs a run");
    AnnulusVerdict v;
    if (component.empty()) {
      v.kind = AnnulusVerdict::contained;
      v.note = "empty component";
      return v;
    }
    for (const Site& s : component)
      if (window_.is_boundary(s)) {
        v.kind = AnnulusVerdict::not_contained;
        v.note = "component reaches the window boundary";
        return v;
      }
    const IndexRange R = boxes_in_window(k);
    std::set<Index> targets;
    for (const Site& s : component) {
      Index ci = core_index_containing(s, k, st_);
      if (!R.contains(ci)) {
        v.note = "component leaves the analyzed boxes";
        return v;
      }
      targets.insert(ci);
    }
    std::set<Index> positive;
    bool unknown = false;
    R.for_each([&](const Index& i) {
      const BoxReport& r = analyze({k, i});
      if (r.feedback == Feedback::positive && !targets.count(i)) positive.insert(i);
      if (!r.determinate) unknown = true;
    });
    // Nearest-neighbour flood through non-positive boxes from the targets.
    std::set<Index> seen(targets.begin(), targets.end());
    std::vector<Index> q(targets.begin(), targets.end());
    bool escaped = false;
    for (std::size_t h = 0; h < q.size(); ++h) {
      const Index cur = q[h];
      for (std::size_t a = 0; a < cur.size(); ++a)
        if (cur[a] == R.lo[a] || cur[a] == R.hi[a]) escaped = true;
      for (std::size_t a = 0; a < cur.size(); ++a)
        for (int sgn : {-1, 1}) {
          Index n = cur;
          n[a] += sgn;
          if (!R.contains(n) || seen.count(n) || positive.count(n)) continue;
          seen.insert(n);
          q.push_back(n);
        }
    }
    if (escaped) {
      v.kind = unknown ? AnnulusVerdict::indeterminate : AnnulusVerdict::not_contained;
      v.note = "no separating ring of positive boxes";
      return v;
    }
    for (const Index& p : positive) {
      bool touches = false;
      for (std::size_t a = 0; a < p.size() && !touches; ++a)
        for (int sgn : {-1, 1}) {
          Index n = p;
          n[a] += sgn;
          if (seen.count(n)) touches = true;
        }
      if (touches) v.annulus.push_back(p);
    }
    v.kind = AnnulusVerdict::contained;
    return v;
  }

  // Scale-0 progenitor: the seed, activated by FPP1, at the root of an FPPlambda site's parent chain.
  std::optional<Site> site_progenitor(std::span<const Coord> v) const {
    if (!run_) throw PreconditionError("site_progenitor needs a run");
    std::size_t lin = run_->window.index_of(v);
    if (run_->state[lin] != 2) return std::nullopt;
    for (std::size_t guard = 0; guard <= run_->state.size(); ++guard) {
      if (run_->activated_by[lin] == static_cast<std::int8_t>(Process::fpp1)) return run_->window.site_of(lin);
      if (run_->parent[lin] < 0) return std::nullopt;
      lin = static_cast<std::size_t>(run_->parent[lin]);
    }
    return std::nullopt;
  }

  const std::map<BoxIndex, BoxReport> all_reports() const {
    std::map<BoxIndex, BoxReport> out;
    for (const auto& [k, e] : reports_)
      if (e.classified) out.emplace(k, e.r);
    return out;
  }

 private:
  struct Entry {
    BoxReport r;
    bool classified = false;
    bool dynamics_done = false;
    bool progenitor_done = false;
  };

  void classify_scale1(BoxReport& r) {
    const Scale1Box& b = scale1_box(r.idx.i);
    const Scale1Params sp = prm_.scale1();
    bool good = true;
    auto eval = [&](int n, auto&& fn) {
      if (prm_.short_circuit && !good) return;
      const bool v = fn();
      r.flags[static_cast<std::size_t>(n - 1)] = v;
      good = good && v;
    };
    // Cheap events first so that short-circuiting skips the pair checks.
    eval(5, [&] { return b.check_E5(times_); });
    eval(1, [&] { return b.check_E1(prm_.epsilon, prm_.theta_hat); });
    eval(2, [&] { return b.check_E2(); });
    if (prm_.enable_e6) eval(6, [&] { return b.check_E6(); });
    eval(3, [&] { return b.check_E3(prm_.c1, sp); });
    eval(4, [&] { return b.check_E4(prm_.c2, times_, sp); });
    r.good = good;
  }

  void classify_scalek(BoxReport& r) {
    if (r.idx.k > prm_.k_max) throw PreconditionError("scale above k_max");
    const IndexRange R = subbox_indices(r.idx, st_);
    std::vector<Index> bad;
    R.for_each([&](const Index& j) {
      if (!is_good({r.idx.k - 1, j})) bad.push_back(j);
    });
    const DisjointCount dc = max_disjoint_bad(bad, prm_.A);
    r.bad_subbox_count = dc.count;
    r.count_method = dc.method;
    r.good = dc.count <= prm_.A;
  }

  ClusterStructure build_clusters(const BoxIndex& idx) {
    const IndexRange R = subbox_indices(idx, st_);
    std::vector<Index> bad;
    R.for_each([&](const Index& j) {
      if (!is_good({idx.k - 1, j})) bad.push_back(j);
    });
    return cluster_structure(idx, st_, bad);
  }

  void check_cas(int k, const std::vector<BoxIndex>& boxes, PropertyReport& rep) {
    PropertyViolations& pv = rep.by_property["CAS" + std::to_string(k)];
    for (const auto& b : boxes) {
      const BoxReport& r = analyze(b);
      if (r.feedback != Feedback::positive) continue;
      ++pv.checked;
      if (k == 1) {
        const Scale1Box& sb = scale1_box(b.i);
        const LocalGraph& g = sb.graph();
        bool bad = false;
        for (std::size_t i = 0; i < g.size() && !bad; ++i)
          if (sb.in_C1_minus(i)) bad = run_->state[run_->window.index_of(g.site(i))] != 1;
        if (bad) pv.violations.push_back(b);
      } else {
        bool bad = false, unknown = false;
        for (const Index& l : clusters(b).wonderful_inner) {
          const BoxReport& sr = analyze({k - 1, l});
          if (!sr.determinate || !sr.in_window) {
            unknown = true;
          } else if (sr.feedback != Feedback::positive) {
            bad = true;
          }
        }
        if (bad) {
          pv.violations.push_back(b);
        } else if (unknown) {
          pv.indeterminate.push_back(b);
        }
      }
    }
  }

  void check_prog(int k, const std::vector<BoxIndex>& boxes, PropertyReport& rep) {
    PropertyViolations& pv = rep.by_property["Prog" + std::to_string(k)];
    for (const auto& b : boxes) {
      const BoxReport& r = analyze(b);
      if (r.feedback != Feedback::negative) continue;
      ++pv.checked;
      const BoxReport& pr = analyze(*r.parent);
      if (!pr.determinate) {
        pv.indeterminate.push_back(b);
      } else if (pr.good && pr.feedback == Feedback::positive) {
        pv.violations.push_back(b);
      }
    }
  }

  void check_fast(int k, const std::vector<BoxIndex>& boxes, const ConstantsTable& ct, PropertyReport& rep) {
    PropertyViolations& pv = rep.by_property["Fast" + std::to_string(k)];
    const double slack = 2.0 * ct.r_k(k) * st_.length_double(k);
    IndexRange ring;
    ring.lo.assign(static_cast<std::size_t>(prm_.d), -1);
    ring.hi.assign(static_cast<std::size_t>(prm_.d), 1);
    for (const auto& b : boxes) {
      const BoxReport& r = analyze(b);
      if (!r.good) continue;
      bool bad = false, unknown = false, any = false;
      ring.for_each([&](const Index& o) {
        Index j = b.i;
        bool zero = true;
        for (int a = 0; a < prm_.d; ++a) {
          j[a] += o[a];
          zero = zero && o[a] == 0;
        }
        if (zero) return;
        const BoxIndex nb{k, j};
        if (!in_window(nb)) return;
        const BoxReport& nr = analyze(nb);
        if (nr.feedback != Feedback::positive) return;
        any = true;
        if (!r.determinate) {
          unknown = true;
        } else if (!(r.entrance->time < nr.entrance->time + slack)) {
          bad = true;
        }
      });
      if (!any) continue;
      ++pv.checked;
      if (bad) {
        pv.violations.push_back(b);
      } else if (unknown) {
        pv.indeterminate.push_back(b);
      }
    }
  }

  void check_del(int k, const std::vector<BoxIndex>& boxes, const ConstantsTable& ct, PropertyReport& rep) {
    PropertyViolations& pv = rep.by_property["Del" + std::to_string(k)];
    const double delay = prm_.C * ct.omega_k(k) * st_.length_double(k);
    for (const auto& b : boxes) {
      const BoxReport& r = analyze(b);
      if (r.feedback != Feedback::negative) continue;
      const BoxReport& pr = analyze(*r.parent);
      if (!pr.determinate) {
        ++pv.checked;
        pv.indeterminate.push_back(b);
        continue;
      }
      if (pr.feedback != Feedback::negative || *r.parent == b) continue;
      ++pv.checked;
      if (!(r.entrance->time > pr.entrance->time + delay)) pv.violations.push_back(b);
    }
  }

  // Conf at scale k-1, evaluated inside good k-boxes.
  void check_conf(int k, const ConstantsTable& ct, PropertyReport& rep) {
    PropertyViolations& pv = rep.by_property["Conf" + std::to_string(k - 1)];
    const double slack = 2.0 * sigma() * ct.r_k(k - 1) * st_.length_double(k - 1);
    boxes_in_window(k).for_each([&](const Index& i) {
      const BoxIndex b{k, i};
      if (!is_good(b)) return;
      const std::size_t n = clusters(b).clusters.size();
      for (std::size_t c = 0; c < n; ++c) {
        if (clusters_.at(b).clusters[c].boundary_kind) continue;
        auto pc = poorly_confined(b, c);
        if (!pc) {
          pv.indeterminate.push_back(b);
          continue;
        }
        if (!*pc) continue;
        ++pv.checked;
        const Cluster& cl = clusters_.at(b).clusters[c];
        const BoxIndex s = *cl.source;
        double tb = std::numeric_limits<double>::infinity();
        for (const Index& l : cl.outer_boundary) {
          auto t = entrance_time_of({k - 1, l});
          if (t) tb = std::min(tb, *t);
        }
        auto sp = progenitor(s);
        const std::set<Index> members(cl.members.begin(), cl.members.end());
        const bool inside = sp && members.count(sp->i);
        const bool late = !(analyze(s).entrance->time < tb + slack);
        if (inside || late) pv.violations.push_back(b);
      }
    });
  }

  SeedField field_;
  PassageTimeField times_;
  AnalysisParams prm_;
  const RunResult* run_;
  ScaleTable st_;
  SiteRange window_;
  double hit_time_ = std::numeric_limits<double>::infinity();
  std::map<BoxIndex, Entry> reports_;
  std::map<Index, std::unique_ptr<Scale1Box>> s1_;
  std::map<BoxIndex, ClusterStructure> clusters_;
};

// Connected components (nearest-neighbour) of FPPlambda-occupied sites.
inline std::vector<std::vector<Site>> fpplambda_components(const RunResult& r) {
  std::vector<char> m(r.state.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = r.state[i] == 2;
  LocalGraph h(window_range(r.window), std::move(m), false);
  const auto lab = label_components(h);
  std::vector<std::vector<Site>> out(lab.count());
  for (std::size_t i = 0; i < h.size(); ++i)
    if (lab.component[i] >= 0) out[static_cast<std::size_t>(lab.component[i])].push_back(h.site(i));
  return out;
}

}  // namespace fpphe
