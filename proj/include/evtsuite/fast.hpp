#pragma once

// Event-native FAST-9 corner test.
//
// The framed detector scans a whole image; here the test runs on one pixel of
// a canvas holding the most recent intensity of every pixel, right after an
// event updates that pixel. No non-maximum suppression.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "evtsuite/image.hpp"
#include "evtsuite/reconstruct.hpp"
#include "evtsuite/transcoder.hpp"
#include "evtsuite/types.hpp"

namespace evtsuite {

inline constexpr int kFastDefaultThreshold = 10;
inline constexpr int kFastArc = 9;
inline constexpr int kFastRadius = 3;

/// Bresenham circle of radius 3, clockwise from 12 o'clock.
inline constexpr std::array<std::array<int, 2>, 16> kFastCircle = {{{0, -3},
                                                                    {1, -3},
                                                                    {2, -2},
                                                                    {3, -1},
                                                                    {3, 0},
                                                                    {3, 1},
                                                                    {2, 2},
                                                                    {1, 3},
                                                                    {0, 3},
                                                                    {-1, 3},
                                                                    {-2, 2},
                                                                    {-3, 1},
                                                                    {-3, 0},
                                                                    {-3, -1},
                                                                    {-2, -2},
                                                                    {-1, -3}}};

namespace detail {

// True iff the 16-bit circular mask has `arc` consecutive set bits.
inline bool has_circular_run(std::uint32_t mask16, int arc) {
  const std::uint32_t m = mask16 | (mask16 << 16);
  std::uint32_t run = m;
  for (int i = 1; i < arc; ++i) run &= m >> i;
  return (run & 0xFFFFu) != 0;
}

}  // namespace detail

/// FAST-9 at (x, y) on channel 0. Pixels closer than 3 to a border are not
/// tested: the result is false and *border_skips (if given) is incremented.
inline bool fast_is_feature(const Image& img, int x, int y, int threshold, std::uint64_t* border_skips = nullptr) {
  if (x < kFastRadius || y < kFastRadius || x >= img.width - kFastRadius || y >= img.height - kFastRadius) {
    if (border_skips) ++*border_skips;
    return false;
  }
  const int center = img.at(x, y);
  const int hi = center + threshold;
  const int lo = center - threshold;
  std::uint32_t brighter = 0;
  std::uint32_t darker = 0;
  for (std::size_t i = 0; i < kFastCircle.size(); ++i) {
    const int v = img.at(x + kFastCircle[i][0], y + kFastCircle[i][1]);
    if (v > hi) brighter |= 1u << i;
    if (v < lo) darker |= 1u << i;
  }
  return detail::has_circular_run(brighter, kFastArc) || detail::has_circular_run(darker, kFastArc);
}

/// The most recent painted intensity of every pixel (channel 0 only).
class IntensityCanvas {
 public:
  explicit IntensityCanvas(const StreamMeta& meta)
      : meta_(meta), levels_(meta.width, meta.height, 1), history_(meta.pixel_count()) {}

  const Image& levels() const noexcept { return levels_; }
  Image& levels() noexcept { return levels_; }
  std::uint64_t border_skips() const noexcept { return border_skips_; }
  std::uint64_t& border_skips() noexcept { return border_skips_; }

  /// Applies e; returns false for events that do not touch the canvas
  /// (other channels, stale timestamps).
  bool apply(const Event& e) {
    if (e.c != 0 || e.x >= meta_.width || e.y >= meta_.height) return false;
    auto& h = history_[std::size_t{e.y} * meta_.width + e.x];
    if (e.t <= h.last_t) return false;
    h.intensity = resolve_intensity(e, h);
    h.last_t = e.t;
    h.last_d = e.d;
    h.seen = true;
    levels_.at(e.x, e.y) = paint_level(h.intensity, meta_.ref_interval);
    return true;
  }

 private:
  StreamMeta meta_;
  Image levels_;
  std::vector<PixelHistory> history_;
  std::uint64_t border_skips_ = 0;
};

inline bool fast_is_feature(IntensityCanvas& canvas, int x, int y, int threshold) {
  return fast_is_feature(canvas.levels(), x, y, threshold, &canvas.border_skips());
}

/// Updates the canvas with e and tests only e's pixel.
inline std::optional<PixelCoord> on_event_feature_check(IntensityCanvas& canvas, const Event& e, int threshold) {
  if (!canvas.apply(e)) return std::nullopt;
  if (fast_is_feature(canvas, e.x, e.y, threshold)) return PixelCoord{e.x, e.y};
  return std::nullopt;
}

/// Transcoder feedback: FAST on the latest input canvas at every pixel that
/// emitted an event during the interval.
inline FeatureFeedback make_fast_feedback(int threshold = kFastDefaultThreshold) {
  return [threshold](const Image& canvas, std::span<const Event> events) {
    std::vector<PixelCoord> out;
    std::vector<bool> tested(static_cast<std::size_t>(canvas.width) * canvas.height, false);
    for (const auto& e : events) {
      if (e.c != 0) continue;
      const std::size_t i = std::size_t{e.y} * canvas.width + e.x;
      if (tested[i]) continue;
      tested[i] = true;
      if (fast_is_feature(canvas, e.x, e.y, threshold)) out.push_back({e.x, e.y});
    }
    return out;
  };
}

}  // namespace evtsuite
