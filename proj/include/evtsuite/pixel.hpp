#pragma once

// Per-pixel asynchronous intensity integration.
//
// A source level v (0..255) sustained for one reference interval contributes
// v intensity units. Internally accumulation is integral: one tick at level v
// adds v * kLevelScale sub-units, and one unit is ref_interval * kLevelScale
// sub-units, so crossing times are computed exactly with integer division.
//
// Collapse mode keeps one node: when the run total reaches 2^d units at tick
// t, {d, t} becomes the candidate and d increments. MultiNode keeps a chain:
// when node i reaches its target the stored event is updated, its decimation
// increments, and every descendant is replaced by a fresh child that
// integrates the excess. Stored decimations therefore strictly decrease from
// head to tail and the emitted events sum to the run total minus a deficit
// smaller than the tail's 2^d.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "evtsuite/params.hpp"
#include "evtsuite/types.hpp"

namespace evtsuite {

inline constexpr std::uint64_t kLevelScale = 256;

struct PixelNode {
  std::uint8_t d = 0;  // target decimation
  bool stored = false;
  std::uint8_t stored_d = 0;
  Tick stored_t = 0;
  std::uint64_t base = 0;  // run total (sub-units) when this node started
};

struct PixelState {
  bool run_active = false;
  std::uint8_t ref_level = 0;
  Tick run_start = 0;
  Tick last_time = 0;
  std::uint64_t accumulated = 0;  // sub-units since run_start

  // Collapse node
  std::uint8_t d = 0;
  bool has_candidate = false;
  std::uint8_t candidate_d = 0;
  Tick candidate_t = 0;

  // MultiNode chain, head first; every node but the last holds a stored event.
  std::vector<PixelNode> chain;

  int effective_m = 0;
  Tick boost_expiry = 0;

  double latent_level = 128.0;  // DVS only
};

/// Coordinates stamped onto emitted events.
struct PixelAddress {
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::uint8_t c = 0;
};

struct IntegrationDiagnostics {
  std::uint64_t clamped_levels = 0;
};

/// Stateless integration rules for one stream (reference interval fixed).
class PixelIntegrator {
 public:
  explicit PixelIntegrator(Tick ref_interval) : ref_interval_(ref_interval) {
    if (ref_interval < 1) throw ArgumentError("ref_interval must be >= 1");
    const std::uint64_t unit = std::uint64_t{ref_interval} * kLevelScale;
    for (int d = 0; d < 64; ++d) {
      const bool overflow = d >= std::countl_zero(unit);
      thresholds_[d] = overflow ? kNever : unit << d;
    }
    thresholds_[64] = kNever;
    // Smallest d whose 2^d units take at least one tick at level 255.
    while (min_d_ < kMaxDecimation && thresholds_[min_d_] < 255 * kLevelScale) ++min_d_;
  }

  Tick ref_interval() const noexcept { return ref_interval_; }
  std::uint8_t min_decimation() const noexcept { return min_d_; }

  /// Sub-units equivalent to 2^d intensity units (saturates).
  std::uint64_t threshold(unsigned d) const noexcept { return thresholds_[std::min(d, 64u)]; }

  std::uint8_t start_decimation(int level) const noexcept {
    if (level < 1) return min_d_;
    const auto d = static_cast<std::uint8_t>(std::bit_width(static_cast<unsigned>(level)) - 1);
    return std::max(d, min_d_);
  }

  void begin_run(PixelState& s, Tick now, int ref_level, PixelMode mode, std::uint8_t start_d) const {
    s.run_active = true;
    s.ref_level = static_cast<std::uint8_t>(std::clamp(ref_level, 0, 255));
    s.run_start = now;
    s.last_time = now;
    s.accumulated = 0;
    s.d = start_d;
    s.has_candidate = false;
    s.chain.clear();
    if (mode == PixelMode::MultiNode) s.chain.push_back(PixelNode{start_d, false, 0, 0, 0});
  }

  void begin_run(PixelState& s, Tick now, int ref_level, PixelMode mode) const {
    begin_run(s, now, ref_level, mode, start_decimation(ref_level));
  }

  /// Integrates `rate` sub-units per tick over [from, from + ticks) without
  /// flushing; records every threshold crossing at floor of its exact time.
  void advance(PixelState& s, std::uint64_t rate, Tick from, Tick ticks, PixelMode mode) const {
    const std::uint64_t a0 = s.accumulated;
    const std::uint64_t a1 = a0 + rate * ticks;
    if (rate > 0) {
      if (mode == PixelMode::Collapse) {
        while (s.d <= kMaxDecimation && thresholds_[s.d] <= a1) {
          s.has_candidate = true;
          s.candidate_d = s.d;
          s.candidate_t = from + static_cast<Tick>((thresholds_[s.d] - a0) / rate);
          ++s.d;
        }
      } else {
        advance_chain(s, rate, from, a0, a1);
      }
    }
    s.accumulated = a1;
    s.last_time = from + ticks;
  }

  /// Emits the run's events and ends the run. The caller starts the next one.
  void flush(PixelState& s, PixelMode mode, Tick now, PixelAddress at, std::vector<Event>& out) const {
    if (!s.run_active) return;
    s.run_active = false;
    bool emitted = false;
    Tick last_t = s.run_start;
    if (mode == PixelMode::Collapse) {
      if (s.has_candidate) {
        out.push_back(Event{at.x, at.y, at.c, s.candidate_d, s.candidate_t});
        emitted = true;
        last_t = s.candidate_t;
      }
    } else {
      for (const auto& n : s.chain) {
        if (!n.stored) break;
        out.push_back(Event{at.x, at.y, at.c, n.stored_d, n.stored_t});
        emitted = true;
        last_t = n.stored_t;
      }
    }
    if (now > last_t) out.push_back(Event{at.x, at.y, at.c, emitted ? kDEmpty : kDZero, now});
  }

  /// Integrates up to `end`, force-flushing at run_start + delta_t_max
  /// whenever the run would exceed it. Forced flushes keep ref_level.
  void advance_until(PixelState& s, std::uint64_t rate, Tick end, const ParamSet& p, PixelAddress at,
                     std::vector<Event>& out, std::uint8_t restart_d) const {
    Tick now = s.last_time;
    while (end - s.run_start > p.delta_t_max) {
      const Tick boundary = std::max<Tick>(s.run_start + p.delta_t_max, now);
      advance(s, rate, now, boundary - now, p.mode);
      flush(s, p.mode, boundary, at, out);
      begin_run(s, boundary, s.ref_level, p.mode, restart_d);
      now = boundary;
    }
    advance(s, rate, now, end - now, p.mode);
  }

  /// One framed sample: `level` held over [now, now + span).
  void integrate_frame_sample(PixelState& s, int level, Tick span, const ParamSet& p, Tick now, PixelAddress at,
                              std::vector<Event>& out, IntegrationDiagnostics* diag = nullptr) const {
    if (level < 0 || level > 255) {
      level = std::clamp(level, 0, 255);
      if (diag) ++diag->clamped_levels;
    }
    if (!s.run_active) {
      begin_run(s, now, level, p.mode);
    } else {
      s.last_time = now;
      if (std::abs(level - int{s.ref_level}) > threshold_at(s, p, now)) {
        flush(s, p.mode, now, at, out);
        begin_run(s, now, level, p.mode);
      }
    }
    advance_until(s, static_cast<std::uint64_t>(level) * kLevelScale, now + span, p, at, out,
                  start_decimation(s.ref_level));
  }

  /// One DVS polarity event at tick t: integrate the latent level up to t,
  /// flush, then step the latent level by exp(polarity * c_threshold).
  void integrate_dvs_sample(PixelState& s, int polarity, Tick t, double c_threshold, const ParamSet& p,
                            PixelAddress at, std::vector<Event>& out) const {
    if (t < s.last_time)
      throw ArgumentError("DVS sample out of order at pixel (" + std::to_string(at.x) + "," +
                          std::to_string(at.y) + "): t=" + std::to_string(t) +
                          " < " + std::to_string(s.last_time));
    if (!s.run_active) begin_dvs_run(s, s.last_time, p);
    advance_until(s, dvs_rate(s), t, p, at, out, min_d_);
    flush(s, p.mode, t, at, out);
    const double step = polarity >= 0 ? c_threshold : -c_threshold;
    s.latent_level = std::clamp(s.latent_level * std::exp(step), 0.5, 255.0);
    begin_dvs_run(s, t, p);
  }

  /// Brings an idle DVS pixel forward to t (forced flushes only).
  void advance_dvs(PixelState& s, Tick t, const ParamSet& p, PixelAddress at, std::vector<Event>& out) const {
    if (t < s.last_time) return;
    if (!s.run_active) begin_dvs_run(s, s.last_time, p);
    advance_until(s, dvs_rate(s), t, p, at, out, min_d_);
  }

  void begin_dvs_run(PixelState& s, Tick now, const ParamSet& p) const {
    begin_run(s, now, static_cast<int>(std::lround(s.latent_level)), p.mode, min_d_);
  }

  static std::uint64_t dvs_rate(const PixelState& s) noexcept {
    return static_cast<std::uint64_t>(std::llround(s.latent_level * static_cast<double>(kLevelScale)));
  }

  static int threshold_at(const PixelState& s, const ParamSet& p, Tick now) noexcept {
    return now < s.boost_expiry ? std::min(s.effective_m, p.m_threshold) : p.m_threshold;
  }

 private:
  static constexpr std::uint64_t kNever = std::numeric_limits<std::uint64_t>::max();

  std::uint64_t node_target(const PixelNode& n) const noexcept {
    const auto thr = thresholds_[std::min<unsigned>(n.d, 64u)];
    return thr == kNever || n.base > kNever - thr ? kNever : n.base + thr;
  }

  void advance_chain(PixelState& s, std::uint64_t rate, Tick from, std::uint64_t a0, std::uint64_t a1) const {
    for (;;) {
      std::size_t best = s.chain.size();
      std::uint64_t best_target = kNever;
      for (std::size_t i = 0; i < s.chain.size(); ++i) {
        const auto target = node_target(s.chain[i]);
        // Strict '<' lets an ancestor win a tie; it replaces the descendants.
        if (target <= a1 && target < best_target) {
          best = i;
          best_target = target;
        }
      }
      if (best == s.chain.size()) return;
      auto& n = s.chain[best];
      n.stored = true;
      n.stored_d = n.d;
      n.stored_t = from + static_cast<Tick>((best_target - a0) / rate);
      ++n.d;
      s.chain.resize(best + 1);
      s.chain.push_back(PixelNode{min_d_, false, 0, 0, best_target});
    }
  }

  Tick ref_interval_;
  std::uint64_t thresholds_[65]{};
  std::uint8_t min_d_ = 0;
};

}  // namespace evtsuite
