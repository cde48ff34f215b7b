#pragma once

// Stream statistics: event rate and realized dynamic range log2(Imax/Imin).

#include <array>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "evtsuite/codec.hpp"
#include "evtsuite/types.hpp"

namespace evtsuite {

struct StreamStats {
  std::uint64_t event_count = 0;
  std::uint64_t duration_ticks = 0;
  double events_per_second = 0.0;
  /// Extrema over non-reserved events, units per tick. Absent if none.
  std::optional<double> i_min;
  std::optional<double> i_max;
  std::optional<double> dynamic_range_bits;
  std::array<std::uint64_t, 256> d_histogram{};
};

/// Streaming accumulator, so large files never need to be held in memory.
class StatsAccumulator {
 public:
  explicit StatsAccumulator(const StreamMeta& meta) : meta_(meta), last_t_(meta.sample_count(), 0) {}

  void add(const Event& e) {
    ++stats_.event_count;
    ++stats_.d_histogram[e.d];
    stats_.duration_ticks = std::max<std::uint64_t>(stats_.duration_ticks, e.t);
    auto& prev = last_t_[meta_.pixel_index(e)];
    if (e.t <= prev)
      throw CorruptionError("pixel (" + std::to_string(e.x) + "," + std::to_string(e.y) +
                            ") timestamps not increasing at t=" + std::to_string(e.t));
    if (!is_reserved_decimation(e.d)) {
      const double i = event_intensity(e.d, e.t - prev);
      if (!stats_.i_min || i < *stats_.i_min) stats_.i_min = i;
      if (!stats_.i_max || i > *stats_.i_max) stats_.i_max = i;
    }
    prev = e.t;
  }

  StreamStats result() const {
    StreamStats s = stats_;
    if (s.duration_ticks > 0)
      s.events_per_second = static_cast<double>(s.event_count) * meta_.ticks_per_second /
                            static_cast<double>(s.duration_ticks);
    if (s.i_min && s.i_max) s.dynamic_range_bits = std::log2(*s.i_max / *s.i_min);
    return s;
  }

 private:
  StreamMeta meta_;
  std::vector<Tick> last_t_;
  StreamStats stats_;
};

inline StreamStats compute_stats(const StreamMeta& meta, std::span<const Event> events) {
  StatsAccumulator acc(meta);
  for (const auto& e : events) acc.add(e);
  return acc.result();
}

inline StreamStats compute_stats(StreamReader& reader) {
  StatsAccumulator acc(reader.meta());
  while (auto e = reader.next()) acc.add(*e);
  return acc.result();
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

inline void print_header_table(std::ostream& os, const StreamMeta& m) {
  os << "codec version:     " << int{m.codec_version} << '\n'
     << "source:            " << to_string(m.source_kind) << '\n'
     << "resolution:        " << m.width << "x" << m.height << '\n'
     << "channels:          " << int{m.channels} << '\n'
     << "ticks per second:  " << m.ticks_per_second << '\n'
     << "ref interval:      " << m.ref_interval << " ticks\n"
     << "delta_t_max:       " << m.delta_t_max << " ticks\n"
     << "crf:               " << int{m.crf} << '\n';
}

inline void print_stats_table(std::ostream& os, const StreamStats& s) {
  const auto flags = os.flags();
  os << "events:            " << s.event_count << '\n'
     << "duration:          " << s.duration_ticks << " ticks\n"
     << std::fixed << std::setprecision(2) << "event rate:        " << s.events_per_second << " events/s\n";
  if (s.dynamic_range_bits)
    os << "dynamic range:     " << *s.dynamic_range_bits << " bits\n";
  else
    os << "dynamic range:     n/a\n";
  os.flags(flags);
}

/// Machine-readable form, one key=value per line.
inline void print_key_values(std::ostream& os, const StreamMeta& m, const StreamStats* s) {
  os << "codec_version=" << int{m.codec_version} << '\n'
     << "source_kind=" << to_string(m.source_kind) << '\n'
     << "width=" << m.width << '\n'
     << "height=" << m.height << '\n'
     << "channels=" << int{m.channels} << '\n'
     << "ticks_per_second=" << m.ticks_per_second << '\n'
     << "ref_interval=" << m.ref_interval << '\n'
     << "delta_t_max=" << m.delta_t_max << '\n'
     << "crf=" << int{m.crf} << '\n';
  if (!s) return;
  const auto flags = os.flags();
  os << "event_count=" << s->event_count << '\n'
     << "duration_ticks=" << s->duration_ticks << '\n'
     << std::setprecision(17) << "events_per_second=" << s->events_per_second << '\n';
  if (s->i_min) os << "i_min=" << *s->i_min << '\n' << "i_max=" << *s->i_max << '\n';
  if (s->dynamic_range_bits) os << "dynamic_range_bits=" << *s->dynamic_range_bits << '\n';
  os.flags(flags);
}

}  // namespace evtsuite
