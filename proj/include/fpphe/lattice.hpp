#pragma once

// Geometry of finite windows of Z^d and the multi-scale box hierarchy.
//
// Conventions:
//  - a Site is a d-vector of signed 64-bit coordinates;
//  - linear indices inside a Window are row-major with axis 0 most
//    significant, so linear order coincides with lexicographic order;
//  - k-cores are half-open, k-boxes and inner parts are closed.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

namespace fpphe {

using Coord = std::int64_t;
using Site = std::vector<Coord>;
using BigInt = boost::multiprecision::cpp_int;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class PreconditionError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline Coord floor_div(Coord a, Coord b) {
  Coord q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

inline Coord ceil_div(Coord a, Coord b) { return -floor_div(-a, b); }

inline Coord l1_distance(std::span<const Coord> a, std::span<const Coord> b) {
  Coord s = 0;
  for (std::size_t j = 0; j < a.size(); ++j) s += a[j] > b[j] ? a[j] - b[j] : b[j] - a[j];
  return s;
}

inline Coord linf_distance(std::span<const Coord> a, std::span<const Coord> b) {
  Coord s = 0;
  for (std::size_t j = 0; j < a.size(); ++j) s = std::max(s, a[j] > b[j] ? a[j] - b[j] : b[j] - a[j]);
  return s;
}

inline std::string to_string(std::span<const Coord> s) {
  std::string out = "(";
  for (std::size_t j = 0; j < s.size(); ++j) {
    if (j) out += ",";
    out += std::to_string(s[j]);
  }
  return out + ")";
}

struct SiteHash {
  std::size_t operator()(const Site& s) const noexcept {
    std::uint64_t h = 0x84222325cbf29ce4ULL;
    for (Coord c : s) {
      h ^= static_cast<std::uint64_t>(c) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    }
    return static_cast<std::size_t>(h);
  }
};

// ---------------------------------------------------------------------------
// Window: Lambda_N = [-N/2, N/2]^d with N = 2*half_side.

class Window {
 public:
  Window() = default;
  Window(int d, Coord half_side) : d_(d), half_(half_side) {
    if (d < 2) throw ConfigError("window dimension must be >= 2");
    if (half_side < 0) throw ConfigError("window half_side must be >= 0");
    strides_.assign(static_cast<std::size_t>(d), 1);
    const Coord side = 2 * half_side + 1;
    for (int a = d - 2; a >= 0; --a) {
      strides_[a] = strides_[a + 1] * static_cast<std::size_t>(side);
    }
    count_ = strides_[0] * static_cast<std::size_t>(side);
  }

  int dim() const { return d_; }
  Coord half_side() const { return half_; }
  Coord side() const { return 2 * half_ + 1; }
  std::size_t site_count() const { return count_; }
  std::size_t stride(int axis) const { return strides_[axis]; }

  bool contains(std::span<const Coord> s) const {
    if (static_cast<int>(s.size()) != d_) return false;
    for (Coord c : s)
      if (c < -half_ || c > half_) return false;
    return true;
  }

  std::size_t index_of(std::span<const Coord> s) const {
    std::size_t idx = 0;
    for (int a = 0; a < d_; ++a) idx += static_cast<std::size_t>(s[a] + half_) * strides_[a];
    return idx;
  }

  void coords_of(std::size_t idx, std::span<Coord> out) const {
    for (int a = 0; a < d_; ++a) {
      out[a] = static_cast<Coord>(idx / strides_[a]) - half_;
      idx %= strides_[a];
    }
  }

  Site site_of(std::size_t idx) const {
    Site s(static_cast<std::size_t>(d_));
    coords_of(idx, s);
    return s;
  }

  Site origin() const { return Site(static_cast<std::size_t>(d_), 0); }
  std::size_t origin_index() const { return index_of(origin()); }

  bool operator==(const Window& o) const { return d_ == o.d_ && half_ == o.half_; }

 private:
  int d_ = 2;
  Coord half_ = 0;
  std::vector<std::size_t> strides_;
  std::size_t count_ = 0;
};

// ---------------------------------------------------------------------------
// Edge: nearest-neighbour pair stored in canonical (lexicographic) order.

struct Edge {
  Site lo;
  int axis = 0;

  Site hi() const {
    Site h = lo;
    ++h[axis];
    return h;
  }

  bool operator==(const Edge& o) const { return axis == o.axis && lo == o.lo; }
  bool operator<(const Edge& o) const { return lo != o.lo ? lo < o.lo : axis < o.axis; }
};

inline Edge make_edge(const Site& a, const Site& b) {
  if (a.size() != b.size()) throw DomainError("edge endpoints differ in dimension");
  if (l1_distance(a, b) != 1) throw DomainError("edge endpoints are not nearest neighbours");
  int axis = 0;
  while (a[axis] == b[axis]) ++axis;
  return Edge{a < b ? a : b, axis};
}

struct EdgeHash {
  std::size_t operator()(const Edge& e) const noexcept {
    return SiteHash{}(e.lo) * 31u + static_cast<std::size_t>(e.axis);
  }
};

// ---------------------------------------------------------------------------
// Site ranges: per-axis integer intervals with an open/closed flag per end.

struct AxisInterval {
  Coord lo = 0;
  Coord hi = 0;
  bool lo_closed = true;
  bool hi_closed = true;

  Coord first() const { return lo_closed ? lo : lo + 1; }
  Coord last() const { return hi_closed ? hi : hi - 1; }
  bool empty() const { return last() < first(); }
  bool contains(Coord c) const { return c >= first() && c <= last(); }
  Coord count() const { return empty() ? 0 : last() - first() + 1; }
};

class SiteRange {
 public:
  SiteRange() = default;
  explicit SiteRange(std::vector<AxisInterval> axes) : axes_(std::move(axes)) {}

  static SiteRange closed_cube(std::span<const Coord> center, Coord lo_off, Coord hi_off) {
    std::vector<AxisInterval> ax;
    for (Coord c : center) ax.push_back({c + lo_off, c + hi_off, true, true});
    return SiteRange(std::move(ax));
  }

  int dim() const { return static_cast<int>(axes_.size()); }
  const AxisInterval& axis(int a) const { return axes_[a]; }
  Coord first(int a) const { return axes_[a].first(); }
  Coord last(int a) const { return axes_[a].last(); }
  Coord extent(int a) const { return axes_[a].count(); }

  bool empty() const {
    return std::any_of(axes_.begin(), axes_.end(), [](const AxisInterval& x) { return x.empty(); });
  }

  std::size_t count() const {
    if (empty()) return 0;
    std::size_t n = 1;
    for (const auto& x : axes_) n *= static_cast<std::size_t>(x.count());
    return n;
  }

  bool contains(std::span<const Coord> s) const {
    for (int a = 0; a < dim(); ++a)
      if (!axes_[a].contains(s[a])) return false;
    return true;
  }

  bool contains(const SiteRange& o) const {
    if (o.empty()) return true;
    for (int a = 0; a < dim(); ++a)
      if (o.first(a) < first(a) || o.last(a) > last(a)) return false;
    return true;
  }

  bool intersects(const SiteRange& o) const {
    for (int a = 0; a < dim(); ++a)
      if (std::max(first(a), o.first(a)) > std::min(last(a), o.last(a))) return false;
    return !empty() && !o.empty();
  }

  SiteRange intersection(const SiteRange& o) const {
    std::vector<AxisInterval> ax;
    for (int a = 0; a < dim(); ++a)
      ax.push_back({std::max(first(a), o.first(a)), std::min(last(a), o.last(a)), true, true});
    return SiteRange(std::move(ax));
  }

  // True when some lattice neighbour lies outside the range.
  bool is_boundary(std::span<const Coord> s) const {
    for (int a = 0; a < dim(); ++a)
      if (s[a] == first(a) || s[a] == last(a)) return true;
    return false;
  }

  // Local linear index (axis 0 most significant, lexicographic order).
  std::size_t local_index(std::span<const Coord> s) const {
    std::size_t idx = 0;
    for (int a = 0; a < dim(); ++a) idx = idx * static_cast<std::size_t>(extent(a)) + static_cast<std::size_t>(s[a] - first(a));
    return idx;
  }

  void local_coords(std::size_t idx, std::span<Coord> out) const {
    for (int a = dim() - 1; a >= 0; --a) {
      const auto e = static_cast<std::size_t>(extent(a));
      out[a] = first(a) + static_cast<Coord>(idx % e);
      idx /= e;
    }
  }

  template <typename F>
  void for_each(F&& f) const {
    const std::size_t n = count();
    Site s(static_cast<std::size_t>(dim()));
    for (std::size_t i = 0; i < n; ++i) {
      local_coords(i, s);
      f(static_cast<const Site&>(s));
    }
  }

  bool operator==(const SiteRange& o) const {
    if (dim() != o.dim()) return false;
    for (int a = 0; a < dim(); ++a)
      if (first(a) != o.first(a) || last(a) != o.last(a)) return false;
    return true;
  }

 private:
  std::vector<AxisInterval> axes_;
};

inline SiteRange window_range(const Window& w) {
  std::vector<AxisInterval> ax(static_cast<std::size_t>(w.dim()), AxisInterval{-w.half_side(), w.half_side(), true, true});
  return SiteRange(std::move(ax));
}

// All sites of the range having at least one lattice neighbour outside it.
inline std::vector<Site> boundary_sites(const SiteRange& r) {
  if (r.empty()) throw DomainError("boundary_sites: empty range");
  std::vector<Site> out;
  r.for_each([&](const Site& s) {
    if (r.is_boundary(s)) out.push_back(s);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Scale table: L_k = k^2 L_{k-1}^d, exact in arbitrary precision.

inline std::vector<BigInt> scale_lengths(const BigInt& L1, int d, int k_max) {
  if (L1 < 6) throw ConfigError("L1 must be >= 6");
  if (d < 2) throw ConfigError("dimension must be >= 2");
  if (k_max < 1) throw ConfigError("k_max must be >= 1");
  std::vector<BigInt> out{L1};
  for (int k = 2; k <= k_max; ++k) {
    BigInt pw = 1;
    for (int j = 0; j < d; ++j) pw *= out.back();
    out.push_back(BigInt(k) * k * pw);
  }
  return out;
}

class ScaleTable {
 public:
  ScaleTable() = default;
  ScaleTable(Coord L1, int d, int k_max) : d_(d), lengths_(scale_lengths(L1, d, k_max)) {
    if (L1 % 6 != 0) throw ConfigError("L1 must be divisible by 6 so that L_k/3 and L_k/6 are integers");
  }

  int dim() const { return d_; }
  int k_max() const { return static_cast<int>(lengths_.size()); }
  const BigInt& length(int k) const { return lengths_.at(static_cast<std::size_t>(k - 1)); }
  const std::vector<BigInt>& lengths() const { return lengths_; }

  // Desk-scale geometry uses 64-bit coordinates; larger scales are table-only.
  Coord length_i64(int k) const {
    const BigInt& L = length(k);
    if (L > BigInt(std::numeric_limits<Coord>::max() / 8)) {
      throw DomainError("scale " + std::to_string(k) + " length does not fit 64-bit geometry");
    }
    return static_cast<Coord>(L);
  }

  double length_double(int k) const { return static_cast<double>(length(k)); }

  // 499 L_k / 1000 is exact whenever 1000 | 499 L_k; otherwise floored.
  bool inner_part_exact(int k) const { return (length(k) * 499) % 1000 == 0; }

 private:
  int d_ = 2;
  std::vector<BigInt> lengths_;
};

// ---------------------------------------------------------------------------
// Box addresses.

struct BoxIndex {
  int k = 1;
  std::vector<Coord> i;

  bool operator==(const BoxIndex& o) const { return k == o.k && i == o.i; }
  bool operator<(const BoxIndex& o) const { return k != o.k ? k < o.k : i < o.i; }
};

struct BoxIndexHash {
  std::size_t operator()(const BoxIndex& b) const noexcept {
    return SiteHash{}(b.i) ^ (static_cast<std::size_t>(b.k) * 0x9e3779b97f4a7c15ULL);
  }
};

inline std::string to_string(const BoxIndex& b) {
  return "Q" + std::to_string(b.k) + to_string(std::span<const Coord>(b.i));
}

inline SiteRange core_of(const BoxIndex& idx, const ScaleTable& st) {
  const Coord L = st.length_i64(idx.k);
  std::vector<AxisInterval> ax;
  for (Coord c : idx.i) ax.push_back({(L / 3) * c - L / 6, (L / 3) * c + L / 6, true, false});
  return SiteRange(std::move(ax));
}

inline SiteRange box_of(const BoxIndex& idx, const ScaleTable& st) {
  const Coord L = st.length_i64(idx.k);
  std::vector<AxisInterval> ax;
  for (Coord c : idx.i) ax.push_back({(L / 3) * c - L / 2, (L / 3) * c + L / 2, true, true});
  return SiteRange(std::move(ax));
}

inline Coord inner_half_width(int k, const ScaleTable& st) {
  const BigInt w = (st.length(k) * 499) / 1000;
  return static_cast<Coord>(w);
}

inline SiteRange inner_part(const BoxIndex& idx, const ScaleTable& st) {
  const Coord L = st.length_i64(idx.k);
  const Coord w = inner_half_width(idx.k, st);
  std::vector<AxisInterval> ax;
  for (Coord c : idx.i) ax.push_back({(L / 3) * c - w, (L / 3) * c + w, true, true});
  return SiteRange(std::move(ax));
}

// Integer index box: per-axis inclusive [lo, hi].
struct IndexRange {
  std::vector<Coord> lo;
  std::vector<Coord> hi;

  bool empty() const {
    for (std::size_t a = 0; a < lo.size(); ++a)
      if (hi[a] < lo[a]) return true;
    return lo.empty();
  }

  bool contains(std::span<const Coord> i) const {
    for (std::size_t a = 0; a < lo.size(); ++a)
      if (i[a] < lo[a] || i[a] > hi[a]) return false;
    return true;
  }

  std::size_t count() const {
    if (empty()) return 0;
    std::size_t n = 1;
    for (std::size_t a = 0; a < lo.size(); ++a) n *= static_cast<std::size_t>(hi[a] - lo[a] + 1);
    return n;
  }

  template <typename F>
  void for_each(F&& f) const {
    if (empty()) return;
    std::vector<Coord> cur = lo;
    while (true) {
      f(static_cast<const std::vector<Coord>&>(cur));
      std::size_t a = cur.size();
      while (a-- > 0) {
        if (cur[a] < hi[a]) {
          ++cur[a];
          break;
        }
        cur[a] = lo[a];
      }
      if (a == static_cast<std::size_t>(-1)) return;
    }
  }
};

// Indices i with Q_k(i) contained in the range.
inline IndexRange box_indices_within(const SiteRange& r, int k, const ScaleTable& st) {
  const Coord L = st.length_i64(k);
  IndexRange out;
  for (int a = 0; a < r.dim(); ++a) {
    out.lo.push_back(ceil_div(r.first(a) + L / 2, L / 3));
    out.hi.push_back(floor_div(r.last(a) - L / 2, L / 3));
  }
  return out;
}

// Indices i with Q_k(i) intersecting the range.
inline IndexRange box_indices_meeting(const SiteRange& r, int k, const ScaleTable& st) {
  const Coord L = st.length_i64(k);
  IndexRange out;
  for (int a = 0; a < r.dim(); ++a) {
    out.lo.push_back(ceil_div(r.first(a) - L / 2, L / 3));
    out.hi.push_back(floor_div(r.last(a) + L / 2, L / 3));
  }
  return out;
}

inline std::vector<Coord> core_index_containing(std::span<const Coord> s, int k, const ScaleTable& st) {
  const Coord L = st.length_i64(k);
  std::vector<Coord> i;
  for (Coord c : s) i.push_back(floor_div(c + L / 6, L / 3));
  return i;
}

inline std::vector<BoxIndex> boxes_containing(std::span<const Coord> s, int k, const ScaleTable& st) {
  SiteRange single = SiteRange::closed_cube(s, 0, 0);
  std::vector<BoxIndex> out;
  box_indices_meeting(single, k, st).for_each([&](const std::vector<Coord>& i) { out.push_back(BoxIndex{k, i}); });
  return out;
}

// (k-1)-boxes contained in Q_k(i).
inline IndexRange subbox_indices(const BoxIndex& idx, const ScaleTable& st) {
  if (idx.k < 2) throw PreconditionError("subbox_indices requires k >= 2");
  return box_indices_within(box_of(idx, st), idx.k - 1, st);
}

// Closed boxes at the same scale intersect iff their indices are within 3 in sup-norm.
inline bool boxes_intersect(const BoxIndex& a, const BoxIndex& b) {
  return a.k == b.k && linf_distance(a.i, b.i) <= 3;
}

}  // namespace fpphe
