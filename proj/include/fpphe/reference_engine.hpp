#pragma once

// Slow validation engine. Each step rescans every occupied site and every
// direction for the earliest unprocessed attempt; no priority queue, no
// extended window, coordinates compared as vectors.

#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <vector>

#include "fpphe/engine.hpp"

namespace fpphe {

class ReferenceSimulation {
 public:
  ReferenceSimulation(const Window& w, const SeedField& seeds, const PassageTimeField& times)
      : w_(w), seeds_(seeds), times_(times) {
    const std::size_t n = w.site_count();
    state_.resize(n);
    tau_.assign(n, std::numeric_limits<double>::quiet_NaN());
    by_.assign(n, Process::none);
    parent_.assign(n, -1);
    for (std::size_t i = 0; i < n; ++i) state_[i] = seeds_.is_seed(w.site_of(i)) ? SiteState::seed : SiteState::empty;
    occupy(w.origin_index(), Process::fpp1, 0.0, -1);
    start_ = std::chrono::steady_clock::now();
  }

  RunResult run(const StopCondition& stop) {
    StopReason reason = StopReason::quiescence;
    while (true) {
      const auto best = next_attempt();
      if (!best) break;
      if (stop.max_occupied && n_occupied_ >= *stop.max_occupied) {
        reason = StopReason::max_occupied;
        break;
      }
      if (stop.time_horizon && best->time > *stop.time_horizon) {
        reason = StopReason::time_horizon;
        break;
      }
      done_[{best->src, best->dir}] = true;
      ++events_;
      last_ = best->time;
      const Process proc = process_of(best->src);
      if (!w_.contains(best->target)) {
        hits_.push_back(BoundaryHit{best->time, best->target, proc});
        if (stop.first_boundary_hit_by &&
            (*stop.first_boundary_hit_by == Process::none || *stop.first_boundary_hit_by == proc)) {
          reason = StopReason::boundary_hit;
          break;
        }
        continue;
      }
      const std::size_t t = w_.index_of(best->target);
      if (state_[t] == SiteState::empty) {
        occupy(t, proc, best->time, static_cast<std::int64_t>(best->src));
      } else if (state_[t] == SiteState::seed) {
        by_[t] = proc;
        occupy(t, Process::fpplambda, best->time, static_cast<std::int64_t>(best->src));
      }
    }
    if (reason == StopReason::quiescence && stop.max_occupied && n_occupied_ >= *stop.max_occupied) {
      reason = StopReason::max_occupied;
    }
    return result(reason);
  }

 private:
  struct Candidate {
    double time;
    Site target;
    Site source;
    std::size_t src;
    int dir;
  };

  Process process_of(std::size_t lin) const {
    return state_[lin] == SiteState::fpp1 ? Process::fpp1 : Process::fpplambda;
  }

  std::optional<Candidate> next_attempt() const {
    std::optional<Candidate> best;
    for (std::size_t s : occupied_) {
      const Site src = w_.site_of(s);
      const Rate rate = process_of(s) == Process::fpp1 ? Rate::one : Rate::lambda;
      for (int dir = 0; dir < 2 * w_.dim(); ++dir) {
        if (done_.count({s, dir})) continue;
        Site tgt = src;
        const int axis = dir / 2;
        tgt[axis] += (dir % 2 == 0) ? 1 : -1;
        const double t = tau_[s] + times_.time(make_edge(src, tgt), rate);
        const bool better = !best || t < best->time ||
                            (t == best->time && (tgt < best->target || (tgt == best->target && src < best->source)));
        if (better) best = Candidate{t, tgt, src, s, dir};
      }
    }
    return best;
  }

  void occupy(std::size_t lin, Process p, double t, std::int64_t parent) {
    state_[lin] = p == Process::fpp1 ? SiteState::fpp1 : SiteState::fpplambda;
    tau_[lin] = t;
    parent_[lin] = parent;
    occupied_.push_back(lin);
    ++n_occupied_;
  }

  RunResult result(StopReason reason) const {
    RunResult r;
    r.window = w_;
    const std::size_t n = w_.site_count();
    for (std::size_t i = 0; i < n; ++i) {
      r.state.push_back(static_cast<std::int8_t>(state_[i]));
      r.tau.push_back(tau_[i]);
      r.activated_by.push_back(static_cast<std::int8_t>(by_[i]));
      r.parent.push_back(parent_[i]);
      switch (state_[i]) {
        case SiteState::seed: ++r.n_seed; break;
        case SiteState::empty: ++r.n_empty; break;
        case SiteState::fpp1: ++r.n_fpp1; break;
        case SiteState::fpplambda: ++r.n_fpplambda; break;
      }
    }
    r.boundary_hits = hits_;
    r.stop_reason = reason;
    r.last_event_time = last_;
    r.events_processed = events_;
    r.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    return r;
  }

  Window w_;
  SeedField seeds_;
  PassageTimeField times_;
  std::vector<SiteState> state_;
  std::vector<double> tau_;
  std::vector<Process> by_;
  std::vector<std::int64_t> parent_;
  std::vector<std::size_t> occupied_;
  std::map<std::pair<std::size_t, int>, bool> done_;
  std::vector<BoundaryHit> hits_;
  std::size_t n_occupied_ = 0;
  std::size_t events_ = 0;
  double last_ = 0.0;
  std::chrono::steady_clock::time_point start_;
};

inline RunResult reference_run(const Window& w, const SeedField& seeds, const PassageTimeField& times,
                               const StopCondition& stop = {}) {
  ReferenceSimulation sim(w, seeds, times);
  return sim.run(stop);
}

}  // namespace fpphe
