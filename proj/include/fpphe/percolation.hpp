#pragma once

// Static analysis of the seed field: non-seed components, box events E1-E6,
// chemical distance, constrained passage times, filled seeds, and Monte Carlo
// estimators for the non-seed percolation probability.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <queue>
#include <vector>

#include <boost/pending/disjoint_sets.hpp>

#include "fpphe/lattice.hpp"
#include "fpphe/randomness.hpp"

namespace fpphe {

// Nearest-neighbour graph on the member sites of a range. With
// drop_boundary_edges set, edges having both endpoints on the range boundary
// are removed.
class LocalGraph {
 public:
  LocalGraph() = default;
  LocalGraph(SiteRange range, std::vector<char> member, bool drop_boundary_edges)
      : range_(std::move(range)), member_(std::move(member)), drop_(drop_boundary_edges) {
    const int d = range_.dim();
    stride_.assign(static_cast<std::size_t>(d), 1);
    for (int a = d - 2; a >= 0; --a) stride_[a] = stride_[a + 1] * static_cast<std::size_t>(range_.extent(a + 1));
    boundary_.assign(member_.size(), 0);
    Site s(static_cast<std::size_t>(d));
    for (std::size_t i = 0; i < member_.size(); ++i) {
      range_.local_coords(i, s);
      boundary_[i] = range_.is_boundary(s);
    }
  }

  template <typename Pred>
  static LocalGraph from_predicate(const SiteRange& range, Pred&& in, bool drop_boundary_edges) {
    std::vector<char> m(range.count(), 0);
    Site s(static_cast<std::size_t>(range.dim()));
    for (std::size_t i = 0; i < m.size(); ++i) {
      range.local_coords(i, s);
      m[i] = in(static_cast<const Site&>(s)) ? 1 : 0;
    }
    return LocalGraph(range, std::move(m), drop_boundary_edges);
  }

  const SiteRange& range() const { return range_; }
  std::size_t size() const { return member_.size(); }
  bool member(std::size_t i) const { return member_[i] != 0; }
  bool on_boundary(std::size_t i) const { return boundary_[i] != 0; }
  bool drops_boundary_edges() const { return drop_; }
  std::size_t stride(int a) const { return stride_[a]; }

  bool contains(std::span<const Coord> s) const { return range_.contains(s) && member(range_.local_index(s)); }
  std::size_t index(std::span<const Coord> s) const { return range_.local_index(s); }
  Site site(std::size_t i) const {
    Site s(static_cast<std::size_t>(range_.dim()));
    range_.local_coords(i, s);
    return s;
  }

  // f(neighbour index, axis, neighbour is the upper endpoint)
  template <typename F>
  void for_each_neighbor(std::size_t i, F&& f) const {
    const int d = range_.dim();
    std::size_t rem = i;
    for (int a = 0; a < d; ++a) {
      const std::size_t c = rem / stride_[a];
      rem %= stride_[a];
      const std::size_t ext = static_cast<std::size_t>(range_.extent(a));
      if (c + 1 < ext) visit(i, i + stride_[a], a, true, f);
      if (c > 0) visit(i, i - stride_[a], a, false, f);
    }
  }

 private:
  template <typename F>
  void visit(std::size_t i, std::size_t j, int a, bool up, F& f) const {
    if (!member_[j]) return;
    if (drop_ && boundary_[i] && boundary_[j]) return;
    f(j, a, up);
  }

  SiteRange range_;
  std::vector<char> member_;
  std::vector<char> boundary_;
  std::vector<std::size_t> stride_;
  bool drop_ = false;
};

// ---------------------------------------------------------------------------

struct Component {
  std::size_t size = 0;
  std::size_t first = 0;  // smallest (lexicographic) member, local index
};

struct ComponentLabeling {
  // rank 0 is the largest component; ties go to the lexicographically smallest member.
  std::vector<std::int32_t> component;  // per local index, -1 outside the subgraph
  std::vector<Component> components;

  std::size_t count() const { return components.size(); }
  std::size_t size(std::size_t rank) const { return rank < components.size() ? components[rank].size : 0; }
  bool in(std::size_t local, std::size_t rank) const {
    return component[local] == static_cast<std::int32_t>(rank);
  }
};

inline ComponentLabeling label_components(const LocalGraph& g) {
  const std::size_t n = g.size();
  boost::disjoint_sets_with_storage<> ds(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!g.member(i)) continue;
    g.for_each_neighbor(i, [&](std::size_t j, int, bool up) {
      if (up) ds.union_set(i, j);
    });
  }
  std::vector<std::size_t> root_size(n, 0), root_first(n, std::numeric_limits<std::size_t>::max());
  for (std::size_t i = 0; i < n; ++i) {
    if (!g.member(i)) continue;
    const std::size_t r = ds.find_set(i);
    ++root_size[r];
    root_first[r] = std::min(root_first[r], i);
  }
  std::vector<std::size_t> roots;
  for (std::size_t i = 0; i < n; ++i)
    if (root_size[i] > 0) roots.push_back(i);
  std::sort(roots.begin(), roots.end(), [&](std::size_t a, std::size_t b) {
    if (root_size[a] != root_size[b]) return root_size[a] > root_size[b];
    return root_first[a] < root_first[b];
  });
  std::vector<std::int32_t> rank_of_root(n, -1);
  ComponentLabeling out;
  for (std::size_t k = 0; k < roots.size(); ++k) {
    rank_of_root[roots[k]] = static_cast<std::int32_t>(k);
    out.components.push_back({root_size[roots[k]], root_first[roots[k]]});
  }
  out.component.assign(n, -1);
  for (std::size_t i = 0; i < n; ++i)
    if (g.member(i)) out.component[i] = rank_of_root[ds.find_set(i)];
  return out;
}

// ---------------------------------------------------------------------------
// Distances inside a LocalGraph.

inline std::vector<std::int64_t> bfs_distances(const LocalGraph& g, std::size_t src) {
  std::vector<std::int64_t> dist(g.size(), -1);
  std::vector<std::size_t> q{src};
  dist[src] = 0;
  for (std::size_t h = 0; h < q.size(); ++h) {
    const std::size_t u = q[h];
    g.for_each_neighbor(u, [&](std::size_t v, int, bool) {
      if (dist[v] < 0) {
        dist[v] = dist[u] + 1;
        q.push_back(v);
      }
    });
  }
  return dist;
}

inline std::optional<std::int64_t> chemical_distance(const LocalGraph& g, std::span<const Coord> x,
                                                     std::span<const Coord> y) {
  if (!g.contains(x) || !g.contains(y)) throw DomainError("chemical_distance: site outside the subgraph");
  const auto dist = bfs_distances(g, g.index(x));
  const std::int64_t dy = dist[g.index(y)];
  if (dy < 0) return std::nullopt;
  return dy;
}

// Edge passage times aligned with the graph: time of the edge between i and
// its neighbour along axis a in the given direction.
inline double edge_time(const LocalGraph& g, const PassageTimeField& f, std::size_t i, std::size_t j, int a, bool up,
                        Rate r, Site& scratch) {
  g.range().local_coords(up ? i : j, scratch);
  return f.time(scratch, a, r);
}

inline std::vector<double> dijkstra_times(const LocalGraph& g, const PassageTimeField& f, std::size_t src, Rate r) {
  std::vector<double> dist(g.size(), std::numeric_limits<double>::infinity());
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
  dist[src] = 0.0;
  pq.push({0.0, src});
  Site scratch(static_cast<std::size_t>(g.range().dim()));
  while (!pq.empty()) {
    auto [du, u] = pq.top();
    pq.pop();
    if (du > dist[u]) continue;
    g.for_each_neighbor(u, [&](std::size_t v, int a, bool up) {
      const double nd = du + edge_time(g, f, u, v, a, up, r, scratch);
      if (nd < dist[v]) {
        dist[v] = nd;
        pq.push({nd, v});
      }
    });
  }
  return dist;
}

inline std::optional<double> constrained_passage_time(const PassageTimeField& f, std::span<const Coord> x,
                                                      std::span<const Coord> y, const LocalGraph& g, Rate r) {
  if (!g.contains(x) || !g.contains(y)) throw DomainError("constrained_passage_time: site outside the subgraph");
  const auto dist = dijkstra_times(g, f, g.index(x), r);
  const double t = dist[g.index(y)];
  if (!std::isfinite(t)) return std::nullopt;
  return t;
}

// ---------------------------------------------------------------------------
// Filled seeds: seeds plus non-seed components of the range that do not touch
// its boundary.

struct FilledSeedField {
  SiteRange range;
  std::vector<char> filled;

  bool is_filled(std::span<const Coord> s) const { return filled[range.local_index(s)] != 0; }
  std::size_t count() const { return static_cast<std::size_t>(std::count(filled.begin(), filled.end(), 1)); }
};

inline FilledSeedField filled_seeds(const SeedField& field, const SiteRange& range) {
  LocalGraph nonseeds = LocalGraph::from_predicate(range, [&](const Site& s) { return !field.is_seed(s); }, false);
  const auto lab = label_components(nonseeds);
  std::vector<char> touches(lab.count(), 0);
  for (std::size_t i = 0; i < nonseeds.size(); ++i)
    if (lab.component[i] >= 0 && nonseeds.on_boundary(i)) touches[static_cast<std::size_t>(lab.component[i])] = 1;
  FilledSeedField out{range, std::vector<char>(range.count(), 0)};
  for (std::size_t i = 0; i < out.filled.size(); ++i) {
    out.filled[i] = lab.component[i] < 0 || !touches[static_cast<std::size_t>(lab.component[i])];
  }
  return out;
}

inline FilledSeedField filled_seeds(const SeedField& field, const Window& w) { return filled_seeds(field, window_range(w)); }

// ---------------------------------------------------------------------------
// Scale-1 box analysis.

struct Scale1Params {
  double epsilon = 0.1;
  double c1 = 5.0;
  double c2 = 5.0;
  double theta_hat = 1.0;
  std::size_t exact_pair_limit = 5000;
  std::size_t sample_sources = 100;
  std::size_t sample_targets = 100;
};

inline double log_squared(double n) { return std::log(n) * std::log(n); }

inline double fact_r1(int d, double c2) { return d * c2; }

class Scale1Box {
 public:
  Scale1Box(const SeedField& field, const BoxIndex& idx, const ScaleTable& st)
      : idx_(idx), st_(st), field_(field) {
    if (idx.k != 1) throw PreconditionError("Scale1Box requires a 1-box");
    graph_ = LocalGraph::from_predicate(box_of(idx, st), [&](const Site& s) { return !field.is_seed(s); }, false);
    labels_ = label_components(graph_);
    std::vector<char> m(graph_.size(), 0);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = graph_.member(i);
    reduced_ = LocalGraph(graph_.range(), std::move(m), true);
  }

  const BoxIndex& index() const { return idx_; }
  const LocalGraph& graph() const { return graph_; }
  // Same sites, boundary-to-boundary edges removed; distances for E3 and E4 use it.
  const LocalGraph& reduced_graph() const { return reduced_; }
  const ComponentLabeling& labeling() const { return labels_; }
  Coord L1() const { return st_.length_i64(1); }

  bool in_C1(std::size_t local) const { return labels_.count() > 0 && labels_.in(local, 0); }
  bool in_C1_minus(std::size_t local) const { return in_C1(local) && !graph_.on_boundary(local); }
  bool in_C1(std::span<const Coord> s) const { return graph_.range().contains(s) && in_C1(graph_.index(s)); }
  bool in_C1_minus(std::span<const Coord> s) const {
    return graph_.range().contains(s) && in_C1_minus(graph_.index(s));
  }

  std::vector<std::size_t> C1_members() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < graph_.size(); ++i)
      if (in_C1(i)) out.push_back(i);
    return out;
  }

  // For every core inside the box, C1 reaches the extremal layer of each face
  // and covers at least (1-eps) theta_hat (L1/3)^d sites of the core.
  bool check_E1(double epsilon, double theta_hat) const {
    if (labels_.count() == 0) return false;
    const int d = graph_.range().dim();
    const Coord L = L1();
    const double need = (1.0 - epsilon) * theta_hat * std::pow(static_cast<double>(L / 3), d);
    bool ok = true;
    IndexRange cores;
    for (int a = 0; a < d; ++a) {
      cores.lo.push_back(idx_.i[a] - 1);
      cores.hi.push_back(idx_.i[a] + 1);
    }
    cores.for_each([&](const std::vector<Coord>& ci) {
      if (!ok) return;
      const SiteRange core = core_of({1, ci}, st_);
      std::vector<char> face_lo(static_cast<std::size_t>(d), 0), face_hi(static_cast<std::size_t>(d), 0);
      std::size_t n = 0;
      core.for_each([&](const Site& s) {
        if (!in_C1(graph_.index(s))) return;
        ++n;
        for (int a = 0; a < d; ++a) {
          if (s[a] == core.first(a)) face_lo[a] = 1;
          if (s[a] == core.last(a)) face_hi[a] = 1;
        }
      });
      for (int a = 0; a < d; ++a) ok = ok && face_lo[a] && face_hi[a];
      ok = ok && static_cast<double>(n) >= need;
    });
    return ok;
  }

  bool check_E2() const {
    if (labels_.count() < 2) return true;
    return static_cast<double>(labels_.size(1)) <= log_squared(static_cast<double>(graph_.size()));
  }

  bool check_E3(double c1, const Scale1Params& sp = {}) const {
    return check_pairs(sp, [&](std::size_t src) {
      const auto dist = bfs_distances(reduced_, src);
      std::vector<double> out(dist.size());
      for (std::size_t i = 0; i < dist.size(); ++i)
        out[i] = dist[i] < 0 ? std::numeric_limits<double>::infinity() : static_cast<double>(dist[i]);
      return out;
    }, c1);
  }

  bool check_E4(double c2, const PassageTimeField& f, const Scale1Params& sp = {}) const {
    return check_pairs(sp, [&](std::size_t src) { return dijkstra_times(reduced_, f, src, Rate::one); }, c2);
  }

  bool check_E5(const PassageTimeField& f) const {
    const double thr = 1.0 / std::sqrt(f.lambda());
    const SiteRange& r = graph_.range();
    bool ok = true;
    Site s(static_cast<std::size_t>(r.dim()));
    for (std::size_t i = 0; i < graph_.size() && ok; ++i) {
      r.local_coords(i, s);
      for (int a = 0; a < r.dim(); ++a) {
        if (s[a] < r.last(a) && f.time(s, a, Rate::lambda) < thr) {
          ok = false;
          break;
        }
      }
    }
    return ok;
  }

  // Largest component of filled sites inside the box has at most L1/100 sites.
  bool check_E6() const {
    const FilledSeedField filled = filled_seeds(field_, graph_.range());
    LocalGraph g(graph_.range(), filled.filled, false);
    const auto lab = label_components(g);
    return static_cast<double>(lab.size(0)) <= static_cast<double>(L1()) / 100.0;
  }

  bool uses_sampled_pairs(const Scale1Params& sp) const { return pair_members().size() > sp.exact_pair_limit; }

  // Sites on two or more faces have no edge left in the reduced graph and are
  // left out of the pair checks.
  bool on_skeleton(std::size_t local) const {
    const Site s = graph_.site(local);
    const SiteRange& r = graph_.range();
    int faces = 0;
    for (int a = 0; a < r.dim(); ++a) faces += (s[a] == r.first(a)) + (s[a] == r.last(a));
    return faces >= 2;
  }

  std::vector<std::size_t> pair_members() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < graph_.size(); ++i)
      if (in_C1(i) && !on_skeleton(i)) out.push_back(i);
    return out;
  }

 private:
  template <typename DistFn>
  bool check_pairs(const Scale1Params& sp, DistFn&& dist_from, double c) const {
    const auto members = pair_members();
    if (members.empty()) return true;
    const double floor_term = log_squared(static_cast<double>(L1()));
    auto bound = [&](std::size_t x, std::size_t y) {
      const Site sx = graph_.site(x), sy = graph_.site(y);
      return c * std::max(static_cast<double>(l1_distance(sx, sy)), floor_term);
    };
    if (members.size() <= sp.exact_pair_limit) {
      for (std::size_t x : members) {
        const auto dist = dist_from(x);
        for (std::size_t y : members)
          if (!(dist[y] < bound(x, y))) return false;
      }
      return true;
    }
    const WorldSeed w = field_.world();
    std::vector<Coord> key = idx_.i;
    for (std::size_t a = 0; a < sp.sample_sources; ++a) {
      const std::size_t x = members[keyed_hash(w, StreamTag::sampling, key, 2 * a) % members.size()];
      const auto dist = dist_from(x);
      for (std::size_t b = 0; b < sp.sample_targets; ++b) {
        const std::size_t y = members[keyed_hash(w, StreamTag::sampling, key, 2 * (a * sp.sample_targets + b) + 1) %
                                      members.size()];
        if (!(dist[y] < bound(x, y))) return false;
      }
    }
    return true;
  }

  BoxIndex idx_;
  ScaleTable st_;
  SeedField field_;
  LocalGraph graph_;
  LocalGraph reduced_;
  ComponentLabeling labels_;
};

// ---------------------------------------------------------------------------
// Monte Carlo estimators. Replica r uses world seed mix(base, r).

struct Estimate {
  double value = 0.0;
  double stderr_ = 0.0;
  std::size_t reps = 0;
  std::size_t successes = 0;
};

inline Estimate binomial_estimate(std::size_t k, std::size_t n) {
  Estimate e;
  e.reps = n;
  e.successes = k;
  if (n == 0) return e;
  e.value = static_cast<double>(k) / static_cast<double>(n);
  e.stderr_ = std::sqrt(e.value * (1.0 - e.value) / static_cast<double>(n));
  return e;
}

inline WorldSeed replica_seed(WorldSeed base, std::uint64_t replica, std::uint64_t cell = 0) {
  const Coord key[2] = {static_cast<Coord>(cell), static_cast<Coord>(replica)};
  return keyed_hash(base, StreamTag::replica, key);
}

// Reach of the origin's non-seed component to the window boundary.
inline bool origin_cluster_reaches_boundary(const SeedField& field, const Window& w) {
  LocalGraph g = LocalGraph::from_predicate(window_range(w), [&](const Site& s) { return !field.is_seed(s); }, false);
  const auto dist = bfs_distances(g, g.index(w.origin()));
  for (std::size_t i = 0; i < g.size(); ++i)
    if (dist[i] >= 0 && g.on_boundary(i)) return true;
  return false;
}

inline Estimate theta_estimate(double p, Coord half_side, std::size_t reps, WorldSeed base, int d = 2) {
  std::size_t k = 0;
  const Window w(d, half_side);
  for (std::size_t r = 0; r < reps; ++r) k += origin_cluster_reaches_boundary(SeedField(p, replica_seed(base, r)), w);
  return binomial_estimate(k, reps);
}

// Filled-site path from a neighbour of the origin to the boundary of Lambda_M.
inline bool filled_reach(const SeedField& field, Coord M, int d = 2) {
  const Window w(d, M / 2);
  const FilledSeedField filled = filled_seeds(field, w);
  LocalGraph g(filled.range, filled.filled, false);
  std::vector<char> seen(g.size(), 0);
  std::vector<std::size_t> q;
  Site o = w.origin();
  for (int a = 0; a < d; ++a)
    for (int s : {-1, 1}) {
      Site n = o;
      n[a] += s;
      if (w.contains(n) && g.contains(n)) {
        seen[g.index(n)] = 1;
        q.push_back(g.index(n));
      }
    }
  for (std::size_t h = 0; h < q.size(); ++h) {
    if (g.on_boundary(q[h])) return true;
    g.for_each_neighbor(q[h], [&](std::size_t v, int, bool) {
      if (!seen[v]) {
        seen[v] = 1;
        q.push_back(v);
      }
    });
  }
  return false;
}

inline Estimate filled_reach_probability(double p, Coord M, std::size_t reps, WorldSeed base, int d = 2) {
  std::size_t k = 0;
  for (std::size_t r = 0; r < reps; ++r) k += filled_reach(SeedField(p, replica_seed(base, r)), M, d);
  return binomial_estimate(k, reps);
}

// Smallest open-site density q at which the window [0,n)^2 is crossed from
// its first column to its last. Sites open in increasing order of their
// hashed uniform value.
inline double crossing_threshold(Coord n, WorldSeed world) {
  const std::size_t N = static_cast<std::size_t>(n * n);
  std::vector<std::pair<double, std::size_t>> order(N);
  for (std::size_t i = 0; i < N; ++i) {
    const Coord key[2] = {static_cast<Coord>(i / n), static_cast<Coord>(i % n)};
    order[i] = {to_unit(keyed_hash(world, StreamTag::seed, key)), i};
  }
  std::sort(order.begin(), order.end());
  boost::disjoint_sets_with_storage<> ds(N + 2);
  const std::size_t left = N, right = N + 1;
  std::vector<char> open(N, 0);
  for (const auto& [u, i] : order) {
    open[i] = 1;
    const std::size_t r = i / static_cast<std::size_t>(n), c = i % static_cast<std::size_t>(n);
    if (c == 0) ds.union_set(i, left);
    if (c + 1 == static_cast<std::size_t>(n)) ds.union_set(i, right);
    if (c > 0 && open[i - 1]) ds.union_set(i, i - 1);
    if (c + 1 < static_cast<std::size_t>(n) && open[i + 1]) ds.union_set(i, i + 1);
    if (r > 0 && open[i - n]) ds.union_set(i, i - n);
    if (r + 1 < static_cast<std::size_t>(n) && open[i + n]) ds.union_set(i, i + n);
    if (ds.find_set(left) == ds.find_set(right)) return u;
  }
  return 1.0;
}

struct CrossingEstimate {
  double pc = 0.0;
  double stderr_ = 0.0;
  std::vector<double> thresholds;

  // Fraction of replicas crossed at open density q.
  double crossing_probability(double q) const {
    std::size_t k = 0;
    for (double t : thresholds) k += t <= q;
    return thresholds.empty() ? 0.0 : static_cast<double>(k) / static_cast<double>(thresholds.size());
  }
};

// The estimate is the density where the crossing probability reaches 1/2,
// i.e. the median of the per-replica thresholds.
inline CrossingEstimate crossing_pc_estimate(Coord n, std::size_t reps, WorldSeed base) {
  CrossingEstimate out;
  for (std::size_t r = 0; r < reps; ++r) out.thresholds.push_back(crossing_threshold(n, replica_seed(base, r)));
  std::vector<double> s = out.thresholds;
  std::sort(s.begin(), s.end());
  out.pc = s.empty() ? 0.0 : (s.size() % 2 ? s[s.size() / 2] : 0.5 * (s[s.size() / 2 - 1] + s[s.size() / 2]));
  double m = 0, v = 0;
  for (double t : s) m += t;
  m /= static_cast<double>(std::max<std::size_t>(1, s.size()));
  for (double t : s) v += (t - m) * (t - m);
  out.stderr_ = s.size() > 1 ? std::sqrt(v / static_cast<double>(s.size() - 1) / static_cast<double>(s.size())) : 0.0;
  return out;
}

}  // namespace fpphe
