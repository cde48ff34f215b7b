#pragma once

// Event data model: the <x, y, c, D, t> tuple, stream header metadata, and the
// intensity expressed by a single event.

#include <cstdint>
#include <stdexcept>
#include <string>

namespace evtsuite {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller supplied an argument outside an operation's precondition.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Input does not look like the declared format (bad magic, unknown version,
/// malformed PGM/Y4M/DVS header).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A stream or file field holds a value no valid writer would produce.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

/// Stream ended in the middle of a record.
class TruncationError : public CorruptionError {
 public:
  TruncationError(const std::string& what, std::uint64_t offset)
      : CorruptionError(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// An event handed to an encoder violates the stream invariants.
class EncodeError : public Error {
 public:
  EncodeError(const std::string& what, std::uint64_t index)
      : Error("event " + std::to_string(index) + ": " + what), index_(index) {}
  std::uint64_t index() const noexcept { return index_; }

 private:
  std::uint64_t index_;
};

/// Writing to an output sink failed.
class SinkError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Event
// ---------------------------------------------------------------------------

using Tick = std::uint32_t;

inline constexpr std::uint8_t kMaxDecimation = 63;
/// Extends the predecessor's average intensity over the intervening time.
inline constexpr std::uint8_t kDEmpty = 255;
/// Zero intensity over the event's span (dark pixel flushed by delta_t_max).
inline constexpr std::uint8_t kDZero = 254;

constexpr bool is_valid_decimation(std::uint8_t d) noexcept {
  return d <= kMaxDecimation || d == kDEmpty || d == kDZero;
}
constexpr bool is_reserved_decimation(std::uint8_t d) noexcept { return d == kDEmpty || d == kDZero; }

struct Event {
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::uint8_t c = 0;
  std::uint8_t d = 0;
  Tick t = 0;

  friend bool operator==(const Event&, const Event&) = default;
};

// ---------------------------------------------------------------------------
// StreamMeta
// ---------------------------------------------------------------------------

enum class SourceKind : std::uint8_t { Framed = 0, Dvs = 1 };

inline constexpr std::uint8_t kCodecVersion = 1;
inline constexpr std::uint32_t kDefaultRefInterval = 255;

struct StreamMeta {
  std::uint16_t width = 1;
  std::uint16_t height = 1;
  std::uint8_t channels = 1;
  std::uint32_t ticks_per_second = kDefaultRefInterval * 30;
  std::uint32_t ref_interval = kDefaultRefInterval;
  std::uint32_t delta_t_max = kDefaultRefInterval;
  SourceKind source_kind = SourceKind::Framed;
  std::uint8_t crf = 3;
  std::uint8_t codec_version = kCodecVersion;

  std::size_t pixel_count() const noexcept { return std::size_t{width} * height; }
  std::size_t sample_count() const noexcept { return pixel_count() * channels; }
  std::size_t pixel_index(const Event& e) const noexcept {
    return (std::size_t{e.y} * width + e.x) * channels + e.c;
  }

  friend bool operator==(const StreamMeta&, const StreamMeta&) = default;
};

/// Returns an empty string when meta is valid, else the first violated rule.
inline std::string validate(const StreamMeta& m) {
  if (m.width < 1 || m.height < 1) return "width and height must be >= 1";
  if (m.channels != 1 && m.channels != 3) return "channels must be 1 or 3, got " + std::to_string(m.channels);
  if (m.ticks_per_second < 1) return "ticks_per_second must be >= 1";
  if (m.ref_interval < 1) return "ref_interval must be >= 1";
  if (m.delta_t_max < m.ref_interval) return "delta_t_max must be >= ref_interval";
  if (m.crf > 9) return "crf must be in 0..9, got " + std::to_string(m.crf);
  if (m.source_kind != SourceKind::Framed && m.source_kind != SourceKind::Dvs) return "unknown source kind";
  return {};
}

/// Checks coordinate and decimation ranges of e against m (not timestamps).
inline std::string validate(const Event& e, const StreamMeta& m) {
  if (e.x >= m.width) return "x=" + std::to_string(e.x) + " out of range";
  if (e.y >= m.height) return "y=" + std::to_string(e.y) + " out of range";
  if (e.c >= m.channels) return "c=" + std::to_string(e.c) + " out of range";
  if (!is_valid_decimation(e.d)) return "d=" + std::to_string(e.d) + " is not a valid decimation code";
  return {};
}

inline const char* to_string(SourceKind k) noexcept { return k == SourceKind::Framed ? "framed" : "dvs"; }

// ---------------------------------------------------------------------------
// Intensity
// ---------------------------------------------------------------------------

/// Intensity in units per tick: 2^d / delta_t. D_ZERO is 0. D_EMPTY has no
/// intensity of its own and is rejected, as is delta_t == 0.
inline double event_intensity(std::uint8_t d, std::uint64_t delta_t) {
  if (delta_t == 0) throw ArgumentError("event_intensity: delta_t must be >= 1");
  if (d == kDEmpty) throw ArgumentError("event_intensity: D_EMPTY carries its predecessor's intensity");
  if (d == kDZero) return 0.0;
  if (d > kMaxDecimation) throw ArgumentError("event_intensity: invalid decimation " + std::to_string(d));
  return static_cast<double>(std::uint64_t{1} << d) / static_cast<double>(delta_t);
}

}  // namespace evtsuite
