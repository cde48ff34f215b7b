#pragma once

// Event stream -> framed video.
//
// Accurate mode integrates each event's intensity over [t_prev, t) into every
// output frame it overlaps and emits a frame once every pixel has covered it
// (or once the pending buffer exceeds its cap, holding uncovered time at the
// pixel's last intensity). Fast mode keeps a single image and snapshots it at
// each frame boundary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "evtsuite/image.hpp"
#include "evtsuite/types.hpp"

namespace evtsuite {

/// ticks_per_second / output_fps; rejects rates that do not divide evenly.
inline Tick frame_interval_for(const StreamMeta& meta, std::uint32_t output_fps) {
  if (output_fps == 0) throw ArgumentError("output fps must be >= 1");
  if (meta.ticks_per_second % output_fps != 0)
    throw ArgumentError("output fps " + std::to_string(output_fps) + " does not divide ticks_per_second " +
                        std::to_string(meta.ticks_per_second));
  return meta.ticks_per_second / output_fps;
}

/// Default playback rate: one output frame per reference interval when that
/// divides evenly, else 1 fps.
inline std::uint32_t native_fps(const StreamMeta& meta) {
  if (meta.ticks_per_second % meta.ref_interval == 0) return meta.ticks_per_second / meta.ref_interval;
  return 1;
}

inline std::uint8_t paint_level(double intensity, Tick ref_interval) {
  const double v = std::round(intensity * static_cast<double>(ref_interval));
  return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
}

/// Per-pixel decode state shared by all consumers of a stream.
struct PixelHistory {
  Tick last_t = 0;
  double intensity = 0.0;  // of the latest event (EMPTY inherits)
  std::uint8_t last_d = kDZero;
  bool seen = false;
};

/// Intensity of e given its pixel history (does not update it).
inline double resolve_intensity(const Event& e, const PixelHistory& h) {
  if (e.d == kDEmpty) return h.intensity;
  if (e.d == kDZero) return 0.0;
  return event_intensity(e.d, e.t - h.last_t);
}

class AccurateReconstructor {
 public:
  /// buffer_cap: maximum pending frames before uncovered pixels are held;
  /// nullopt waits for every pixel indefinitely.
  AccurateReconstructor(const StreamMeta& meta, Tick frame_interval, std::optional<std::size_t> buffer_cap)
      : meta_(meta), interval_(frame_interval), cap_(buffer_cap), history_(meta.sample_count()) {
    if (frame_interval < 1) throw ArgumentError("frame interval must be >= 1");
    if (cap_ && *cap_ < 1) throw ArgumentError("buffer cap must be >= 1");
  }

  std::uint64_t frames_emitted() const noexcept { return first_index_; }
  std::size_t pending_frames() const noexcept { return pending_.size(); }

  void push(const Event& e, std::vector<Image>& out) {
    if (auto err = validate(e, meta_); !err.empty()) throw CorruptionError("event: " + err);
    const std::size_t p = meta_.pixel_index(e);
    auto& h = history_[p];
    if (e.t <= h.last_t)
      throw CorruptionError("pixel (" + std::to_string(e.x) + "," + std::to_string(e.y) + "," +
                            std::to_string(e.c) + ") timestamp " + std::to_string(e.t) +
                            " not after previous " + std::to_string(h.last_t));
    const double intensity = resolve_intensity(e, h);
    const std::uint64_t a = h.last_t;
    const std::uint64_t b = e.t;
    max_t_ = std::max<std::uint64_t>(max_t_, b);

    const std::uint64_t last_frame = (b - 1) / interval_;
    ensure_frames(last_frame);
    for (std::uint64_t k = std::max<std::uint64_t>(a / interval_, first_index_); k <= last_frame; ++k) {
      const std::uint64_t lo = std::max<std::uint64_t>(a, k * interval_);
      const std::uint64_t hi = std::min<std::uint64_t>(b, (k + 1) * interval_);
      auto& f = pending_[k - first_index_];
      f.integral[p] += intensity * static_cast<double>(hi - lo);
      if ((k + 1) * interval_ <= b) ++f.complete;
    }
    h.last_t = e.t;
    h.intensity = intensity;
    h.last_d = e.d;
    h.seen = true;

    while (!pending_.empty() && pending_.front().complete == history_.size()) emit_front(out);
    while (cap_ && pending_.size() > *cap_) emit_front(out);
  }

  /// Emits every remaining whole frame: floor(stream duration / interval) in total.
  void finish(std::vector<Image>& out) {
    const std::uint64_t total = max_t_ / interval_;
    if (total > 0) ensure_frames(total - 1);
    while (first_index_ < total) emit_front(out);
    pending_.clear();
  }

 private:
  struct Pending {
    std::vector<double> integral;
    std::size_t complete = 0;
  };

  void ensure_frames(std::uint64_t k) {
    while (first_index_ + pending_.size() <= k) pending_.push_back(Pending{std::vector<double>(history_.size(), 0.0), 0});
  }

  void emit_front(std::vector<Image>& out) {
    const auto& f = pending_.front();
    const std::uint64_t lo = first_index_ * interval_;
    const std::uint64_t hi = lo + interval_;
    Image img(meta_.width, meta_.height, meta_.channels);
    for (std::size_t p = 0; p < history_.size(); ++p) {
      const auto& h = history_[p];
      const std::uint64_t covered_to = std::clamp<std::uint64_t>(h.last_t, lo, hi);
      const double held = h.seen ? h.intensity * static_cast<double>(hi - covered_to) : 0.0;
      img.data[p] = paint_level((f.integral[p] + held) / static_cast<double>(interval_), meta_.ref_interval);
    }
    out.push_back(std::move(img));
    pending_.pop_front();
    ++first_index_;
  }

  StreamMeta meta_;
  Tick interval_;
  std::optional<std::size_t> cap_;
  std::vector<PixelHistory> history_;
  std::deque<Pending> pending_;
  std::uint64_t first_index_ = 0;
  std::uint64_t max_t_ = 0;
};

inline std::vector<Image> reconstruct_accurate(const StreamMeta& meta, std::span<const Event> events,
                                               std::uint32_t output_fps,
                                               std::optional<std::size_t> buffer_cap = std::nullopt) {
  AccurateReconstructor r(meta, frame_interval_for(meta, output_fps), buffer_cap);
  std::vector<Image> frames;
  for (const auto& e : events) r.push(e, frames);
  r.finish(frames);
  return frames;
}

// ---------------------------------------------------------------------------
// Fast mode
// ---------------------------------------------------------------------------

class FrameCursor {
 public:
  FrameCursor(const StreamMeta& meta, Tick frame_interval)
      : meta_(meta),
        interval_(frame_interval),
        next_boundary_(frame_interval),
        image_(meta.width, meta.height, meta.channels),
        history_(meta.sample_count()) {
    if (frame_interval < 1) throw ArgumentError("frame interval must be >= 1");
  }

  Tick frame_interval() const noexcept { return interval_; }
  std::uint64_t next_boundary() const noexcept { return next_boundary_; }
  const Image& image() const noexcept { return image_; }

  /// Snapshots one frame per boundary strictly before e.t, then paints e.
  /// Returns the number of frames appended to out.
  std::size_t apply_event(const Event& e, std::vector<Image>& out) {
    std::size_t n = 0;
    while (e.t > next_boundary_) {
      out.push_back(image_);
      next_boundary_ += interval_;
      ++n;
    }
    max_t_ = std::max<std::uint64_t>(max_t_, e.t);
    if (validate(e, meta_).empty()) {
      const std::size_t p = meta_.pixel_index(e);
      auto& h = history_[p];
      if (e.t > h.last_t) {
        h.intensity = resolve_intensity(e, h);
        h.last_t = e.t;
        h.last_d = e.d;
        h.seen = true;
        image_.data[p] = paint_level(h.intensity, meta_.ref_interval);
      }
    }
    return n;
  }

  /// Emits the frames for every boundary at or before the latest event.
  std::size_t finish(std::vector<Image>& out) {
    std::size_t n = 0;
    while (next_boundary_ <= max_t_) {
      out.push_back(image_);
      next_boundary_ += interval_;
      ++n;
    }
    return n;
  }

 private:
  StreamMeta meta_;
  Tick interval_;
  std::uint64_t next_boundary_;
  std::uint64_t max_t_ = 0;
  Image image_;
  std::vector<PixelHistory> history_;
};

inline std::vector<Image> reconstruct_fast(const StreamMeta& meta, std::span<const Event> events,
                                           std::uint32_t output_fps) {
  FrameCursor cursor(meta, frame_interval_for(meta, output_fps));
  std::vector<Image> frames;
  for (const auto& e : events) cursor.apply_event(e, frames);
  cursor.finish(frames);
  return frames;
}

// ---------------------------------------------------------------------------
// Component views
// ---------------------------------------------------------------------------

enum class ViewMode { Intensity, DComponent, DeltaTComponent };

inline const char* to_string(ViewMode v) noexcept {
  switch (v) {
    case ViewMode::Intensity: return "intensity";
    case ViewMode::DComponent: return "d";
    case ViewMode::DeltaTComponent: return "dt";
  }
  return "?";
}

inline std::optional<ViewMode> parse_view_mode(std::string_view s) {
  if (s == "intensity") return ViewMode::Intensity;
  if (s == "d") return ViewMode::DComponent;
  if (s == "dt") return ViewMode::DeltaTComponent;
  return std::nullopt;
}

inline std::uint8_t d_component_level(std::uint8_t d) {
  if (is_reserved_decimation(d) || d > kMaxDecimation) return 0;
  return static_cast<std::uint8_t>(std::lround(d * 255.0 / kMaxDecimation));
}

inline std::uint8_t delta_t_component_level(std::uint64_t delta_t, Tick delta_t_max) {
  const auto clipped = std::min<std::uint64_t>(delta_t, delta_t_max);
  return static_cast<std::uint8_t>(std::lround(static_cast<double>(clipped) * 255.0 / delta_t_max));
}

/// Tracks the latest event of every pixel and renders any of the three views.
class ComponentView {
 public:
  explicit ComponentView(const StreamMeta& meta)
      : meta_(meta), history_(meta.sample_count()), delta_t_(meta.sample_count(), 0) {}

  void apply(const Event& e) {
    if (!validate(e, meta_).empty()) return;
    const std::size_t p = meta_.pixel_index(e);
    auto& h = history_[p];
    if (e.t <= h.last_t) return;
    h.intensity = resolve_intensity(e, h);
    delta_t_[p] = e.t - h.last_t;
    h.last_t = e.t;
    h.last_d = e.d;
    h.seen = true;
  }

  Image render(ViewMode mode) const {
    Image img(meta_.width, meta_.height, meta_.channels);
    for (std::size_t p = 0; p < history_.size(); ++p) {
      const auto& h = history_[p];
      if (!h.seen) continue;
      switch (mode) {
        case ViewMode::Intensity: img.data[p] = paint_level(h.intensity, meta_.ref_interval); break;
        case ViewMode::DComponent: img.data[p] = d_component_level(h.last_d); break;
        case ViewMode::DeltaTComponent: img.data[p] = delta_t_component_level(delta_t_[p], meta_.delta_t_max); break;
      }
    }
    return img;
  }

 private:
  StreamMeta meta_;
  std::vector<PixelHistory> history_;
  std::vector<std::uint64_t> delta_t_;
};

/// Snapshots a component view at every frame boundary, with the same
/// boundary rule as FrameCursor.
class ViewCursor {
 public:
  ViewCursor(const StreamMeta& meta, Tick frame_interval, ViewMode mode)
      : view_(meta), mode_(mode), interval_(frame_interval), next_boundary_(frame_interval) {
    if (frame_interval < 1) throw ArgumentError("frame interval must be >= 1");
  }

  std::size_t apply_event(const Event& e, std::vector<Image>& out) {
    std::size_t n = 0;
    while (e.t > next_boundary_) {
      out.push_back(view_.render(mode_));
      next_boundary_ += interval_;
      ++n;
    }
    max_t_ = std::max<std::uint64_t>(max_t_, e.t);
    view_.apply(e);
    return n;
  }

  std::size_t finish(std::vector<Image>& out) {
    std::size_t n = 0;
    for (; next_boundary_ <= max_t_; next_boundary_ += interval_, ++n) out.push_back(view_.render(mode_));
    return n;
  }

 private:
  ComponentView view_;
  ViewMode mode_;
  Tick interval_;
  std::uint64_t next_boundary_;
  std::uint64_t max_t_ = 0;
};

/// Renders the latest event per pixel within `events`; each pixel's first
/// event in the window is differenced against t = 0.
inline Image render_view(std::span<const Event> events, ViewMode mode, const StreamMeta& meta) {
  ComponentView view(meta);
  for (const auto& e : events) view.apply(e);
  return view.render(mode);
}

}  // namespace evtsuite
