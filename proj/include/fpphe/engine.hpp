#pragma once

// Event-driven FPPHE dynamics on a finite window.
//
// FPP1 starts at the origin at time 0. Every occupied site attempts all of its
// 2d neighbours; attempts are processed in global time order, ties broken by
// (lexicographic target, lexicographic source). Attempts that leave the window
// are logged as boundary hits and have no further effect.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "fpphe/lattice.hpp"
#include "fpphe/randomness.hpp"

namespace fpphe {

enum class Process : std::int8_t { none = 0, fpp1 = 1, fpplambda = 2 };

enum class SiteState : std::int8_t { seed = -1, empty = 0, fpp1 = 1, fpplambda = 2 };

enum class Outcome : std::int8_t { discarded, occupied, activated, boundary };

enum class StopReason : std::int8_t { quiescence, time_horizon, max_occupied, boundary_hit };

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::quiescence: return "quiescence";
    case StopReason::time_horizon: return "time_horizon";
    case StopReason::max_occupied: return "max_occupied";
    case StopReason::boundary_hit: return "boundary_hit";
  }
  return "?";
}

inline const char* to_string(Process p) {
  switch (p) {
    case Process::none: return "none";
    case Process::fpp1: return "fpp1";
    case Process::fpplambda: return "fpplambda";
  }
  return "?";
}

inline Rate rate_of(Process p) { return p == Process::fpp1 ? Rate::one : Rate::lambda; }

struct BoundaryHit {
  double time = 0.0;
  Site site;
  Process process = Process::none;
};

struct StopCondition {
  std::optional<double> time_horizon;
  std::optional<std::size_t> max_occupied;
  // Process::none means a hit by either process.
  std::optional<Process> first_boundary_hit_by;
  bool quiescence = true;

  static StopCondition until_quiescent() { return {}; }
};

struct ProcessedEvent {
  double time = 0.0;
  Site source;
  Site target;
  Process process = Process::none;
  Outcome outcome = Outcome::discarded;
};

struct SiteRecord {
  SiteState state = SiteState::empty;
  std::optional<double> entrance_time;
  Process activated_by = Process::none;
  std::optional<Site> conquering_neighbor;
};

// Final configuration stored per site in window linear order.
struct RunResult {
  Window window;
  std::vector<std::int8_t> state;
  std::vector<double> tau;            // NaN when never occupied
  std::vector<std::int8_t> activated_by;
  std::vector<std::int64_t> parent;   // window linear index, -1 when absent
  std::size_t n_seed = 0, n_empty = 0, n_fpp1 = 0, n_fpplambda = 0;
  std::vector<BoundaryHit> boundary_hits;
  StopReason stop_reason = StopReason::quiescence;
  double last_event_time = 0.0;
  std::size_t events_processed = 0;
  double wall_time = 0.0;

  SiteState state_at(std::size_t lin) const { return static_cast<SiteState>(state[lin]); }
  bool occupied(std::size_t lin) const { return state[lin] == 1 || state[lin] == 2; }

  std::optional<double> first_boundary_time(Process by = Process::none) const {
    for (const auto& h : boundary_hits)
      if (by == Process::none || h.process == by) return h.time;
    return std::nullopt;
  }

  bool reached_boundary(Process by) const { return first_boundary_time(by).has_value(); }

  SiteRecord record(std::span<const Coord> v) const {
    if (!window.contains(v)) throw DomainError("site outside window");
    const std::size_t lin = window.index_of(v);
    SiteRecord r;
    r.state = state_at(lin);
    if (!std::isnan(tau[lin])) r.entrance_time = tau[lin];
    r.activated_by = static_cast<Process>(activated_by[lin]);
    if (parent[lin] >= 0) r.conquering_neighbor = window.site_of(static_cast<std::size_t>(parent[lin]));
    return r;
  }
};

inline std::optional<double> entrance_time(const RunResult& r, std::span<const Coord> v) {
  if (!r.window.contains(v)) throw DomainError("entrance_time: site outside window");
  const double t = r.tau[r.window.index_of(v)];
  if (std::isnan(t)) return std::nullopt;
  return t;
}

struct BoxEntrance {
  double time = 0.0;
  Site site;
};

// Earliest occupation inside the part of the range that lies in the window;
// ties go to the lexicographically smallest site.
inline std::optional<BoxEntrance> box_entrance_time(const RunResult& r, const SiteRange& box) {
  const SiteRange w = window_range(r.window);
  if (!box.intersects(w)) throw DomainError("box_entrance_time: box does not meet the window");
  const SiteRange part = box.intersection(w);
  std::optional<BoxEntrance> best;
  part.for_each([&](const Site& s) {
    const double t = r.tau[r.window.index_of(s)];
    if (!std::isnan(t) && (!best || t < best->time)) best = BoxEntrance{t, s};
  });
  return best;
}

inline std::optional<BoxEntrance> box_entrance_time(const RunResult& r, const BoxIndex& idx, const ScaleTable& st) {
  return box_entrance_time(r, box_of(idx, st));
}

// ---------------------------------------------------------------------------

class Simulation {
 public:
  Simulation(const Window& w, const SeedField& seeds, const PassageTimeField& times, bool keep_log = false)
      : window_(w), ext_(w.dim(), w.half_side() + 1), seeds_(seeds), times_(times), keep_log_(keep_log) {
    const int d = w.dim();
    const std::size_t n = ext_.site_count();
    state_.assign(n, kOutside);
    tau_.assign(n, std::numeric_limits<double>::quiet_NaN());
    activated_.assign(n, 0);
    parent_.assign(n, -1);
    coords_.assign(static_cast<std::size_t>(d), 0);
    window_range(w).for_each([&](const Site& v) {
      state_[ext_.index_of(v)] = seeds_.is_seed(v) ? static_cast<std::int8_t>(-1) : static_cast<std::int8_t>(0);
    });
    const std::size_t o = ext_.index_of(w.origin());
    occupy(o, Process::fpp1, 0.0, -1);
    start_ = std::chrono::steady_clock::now();
  }

  const Window& window() const { return window_; }
  std::size_t pending() const { return heap_.size(); }
  std::size_t occupied_count() const { return n_occupied_; }
  const std::vector<ProcessedEvent>& log() const { return log_; }

  std::optional<double> next_time() const {
    if (heap_.empty()) return std::nullopt;
    return heap_.top().time;
  }

  std::optional<ProcessedEvent> step() {
    if (heap_.empty()) return std::nullopt;
    const Attempt a = heap_.top();
    heap_.pop();
    ++events_;
    last_time_ = a.time;
    const Process proc = static_cast<Process>(a.process);
    Outcome outcome = Outcome::discarded;
    const std::int8_t st = state_[a.target];
    if (st == kOutside) {
      outcome = Outcome::boundary;
      hits_.push_back(BoundaryHit{a.time, ext_.site_of(a.target), proc});
    } else if (st == 0) {
      outcome = Outcome::occupied;
      occupy(a.target, proc, a.time, static_cast<std::int64_t>(a.source));
    } else if (st == -1) {
      outcome = Outcome::activated;
      activated_[a.target] = static_cast<std::int8_t>(proc);
      occupy(a.target, Process::fpplambda, a.time, static_cast<std::int64_t>(a.source));
    }
    ProcessedEvent ev{a.time, {}, {}, proc, outcome};
    if (keep_log_ || outcome == Outcome::boundary) {
      ev.source = ext_.site_of(a.source);
      ev.target = ext_.site_of(a.target);
    }
    if (keep_log_) log_.push_back(ev);
    return ev;
  }

  RunResult run(const StopCondition& stop) {
    StopReason reason = StopReason::quiescence;
    while (!heap_.empty()) {
      if (stop.max_occupied && n_occupied_ >= *stop.max_occupied) {
        reason = StopReason::max_occupied;
        break;
      }
      if (stop.time_horizon && heap_.top().time > *stop.time_horizon) {
        reason = StopReason::time_horizon;
        break;
      }
      const auto ev = step();
      if (stop.first_boundary_hit_by && ev->outcome == Outcome::boundary &&
          (*stop.first_boundary_hit_by == Process::none || ev->process == *stop.first_boundary_hit_by)) {
        reason = StopReason::boundary_hit;
        break;
      }
    }
    if (heap_.empty() && reason == StopReason::quiescence && stop.max_occupied && n_occupied_ >= *stop.max_occupied) {
      reason = StopReason::max_occupied;
    }
    return result(reason);
  }

  RunResult result(StopReason reason) const {
    RunResult r;
    r.window = window_;
    const std::size_t n = window_.site_count();
    r.state.resize(n);
    r.tau.resize(n);
    r.activated_by.resize(n);
    r.parent.resize(n);
    Site s(static_cast<std::size_t>(window_.dim()));
    for (std::size_t i = 0; i < n; ++i) {
      window_.coords_of(i, s);
      const std::size_t e = ext_.index_of(s);
      r.state[i] = state_[e];
      r.tau[i] = tau_[e];
      r.activated_by[i] = activated_[e];
      if (parent_[e] >= 0) {
        Site ps = ext_.site_of(static_cast<std::size_t>(parent_[e]));
        r.parent[i] = static_cast<std::int64_t>(window_.index_of(ps));
      } else {
        r.parent[i] = -1;
      }
      switch (r.state[i]) {
        case -1: ++r.n_seed; break;
        case 0: ++r.n_empty; break;
        case 1: ++r.n_fpp1; break;
        default: ++r.n_fpplambda; break;
      }
    }
    r.boundary_hits = hits_;
    r.stop_reason = reason;
    r.last_event_time = last_time_;
    r.events_processed = events_;
    r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    return r;
  }

 private:
  static constexpr std::int8_t kOutside = 3;

  struct Attempt {
    double time;
    std::size_t target;
    std::size_t source;
    std::int8_t process;
  };

  // Extended-window linear order equals lexicographic order, which gives the tie-break.
  struct Later {
    bool operator()(const Attempt& a, const Attempt& b) const {
      if (a.time != b.time) return a.time > b.time;
      if (a.target != b.target) return a.target > b.target;
      return a.source > b.source;
    }
  };

  void occupy(std::size_t e, Process proc, double t, std::int64_t src) {
    state_[e] = static_cast<std::int8_t>(proc);
    tau_[e] = t;
    parent_[e] = src;
    ++n_occupied_;
    const int d = window_.dim();
    const Rate rate = rate_of(proc);
    ext_.coords_of(e, coords_);
    for (int a = 0; a < d; ++a) {
      const std::size_t stride = ext_.stride(a);
      // Edge towards +axis has this site as lower endpoint.
      heap_.push(Attempt{t + times_.time(coords_, a, rate), e + stride, e, static_cast<std::int8_t>(proc)});
      --coords_[a];
      heap_.push(Attempt{t + times_.time(coords_, a, rate), e - stride, e, static_cast<std::int8_t>(proc)});
      ++coords_[a];
    }
  }

  Window window_;
  Window ext_;
  SeedField seeds_;
  PassageTimeField times_;
  bool keep_log_ = false;
  std::vector<std::int8_t> state_;
  std::vector<double> tau_;
  std::vector<std::int8_t> activated_;
  std::vector<std::int64_t> parent_;
  std::priority_queue<Attempt, std::vector<Attempt>, Later> heap_;
  std::vector<BoundaryHit> hits_;
  std::vector<ProcessedEvent> log_;
  Site coords_;
  std::size_t n_occupied_ = 0;
  std::size_t events_ = 0;
  double last_time_ = 0.0;
  std::chrono::steady_clock::time_point start_;
};

inline RunResult simulate(const Window& w, const SeedField& seeds, const PassageTimeField& times,
                          const StopCondition& stop = {}) {
  Simulation sim(w, seeds, times);
  return sim.run(stop);
}

}  // namespace fpphe
