#pragma once

// Bit-exact stream format.
//
//   Header (24 bytes, little-endian):
//     "AEVS" | version u8 | source_kind u8 | channels u8 | crf u8 |
//     width u16 | height u16 | ticks_per_second u32 | ref_interval u32 |
//     delta_t_max u32
//   Event record:
//     x u16 | y u16 | [c u8 iff channels == 3] | d u8 | t u32
//
// Records are fixed width: 9 bytes for grayscale, 10 for color.

#include <array>
#include <cstdint>
#include <cstring>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "evtsuite/types.hpp"

namespace evtsuite {

inline constexpr std::size_t kHeaderSize = 24;
inline constexpr std::array<char, 4> kMagic = {'A', 'E', 'V', 'S'};

constexpr std::size_t record_size(std::uint8_t channels) noexcept { return channels == 3 ? 10 : 9; }
inline std::size_t record_size(const StreamMeta& m) noexcept { return record_size(m.channels); }

namespace detail {

inline void put_u16(std::uint8_t* p, std::uint16_t v) {
  p[0] = static_cast<std::uint8_t>(v);
  p[1] = static_cast<std::uint8_t>(v >> 8);
}
inline void put_u32(std::uint8_t* p, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * i));
}
inline std::uint16_t get_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline std::uint32_t get_u32(const std::uint8_t* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
         (std::uint32_t{p[3]} << 24);
}

}  // namespace detail

inline std::array<std::uint8_t, kHeaderSize> encode_header(const StreamMeta& m) {
  std::array<std::uint8_t, kHeaderSize> h{};
  std::memcpy(h.data(), kMagic.data(), 4);
  h[4] = m.codec_version;
  h[5] = static_cast<std::uint8_t>(m.source_kind);
  h[6] = m.channels;
  h[7] = m.crf;
  detail::put_u16(&h[8], m.width);
  detail::put_u16(&h[10], m.height);
  detail::put_u32(&h[12], m.ticks_per_second);
  detail::put_u32(&h[16], m.ref_interval);
  detail::put_u32(&h[20], m.delta_t_max);
  return h;
}

inline StreamMeta decode_header(std::span<const std::uint8_t, kHeaderSize> h) {
  if (std::memcmp(h.data(), kMagic.data(), 4) != 0) throw FormatError("not an event stream (bad magic)");
  if (h[4] != kCodecVersion) throw FormatError("unsupported codec version " + std::to_string(h[4]));
  if (h[5] > 1) throw CorruptionError("header: unknown source kind " + std::to_string(h[5]));
  StreamMeta m;
  m.codec_version = h[4];
  m.source_kind = static_cast<SourceKind>(h[5]);
  m.channels = h[6];
  m.crf = h[7];
  m.width = detail::get_u16(&h[8]);
  m.height = detail::get_u16(&h[10]);
  m.ticks_per_second = detail::get_u32(&h[12]);
  m.ref_interval = detail::get_u32(&h[16]);
  m.delta_t_max = detail::get_u32(&h[20]);
  if (auto err = validate(m); !err.empty()) throw CorruptionError("header: " + err);
  return m;
}

/// Reads exactly kHeaderSize bytes from in and decodes them.
inline StreamMeta read_header(std::istream& in) {
  std::array<std::uint8_t, kHeaderSize> h{};
  in.read(reinterpret_cast<char*>(h.data()), kHeaderSize);
  const auto got = static_cast<std::size_t>(in.gcount());
  if (got < 4) throw FormatError("not an event stream (file shorter than magic)");
  if (std::memcmp(h.data(), kMagic.data(), 4) != 0) throw FormatError("not an event stream (bad magic)");
  if (got < kHeaderSize) throw TruncationError("truncated header", got);
  return decode_header(h);
}

/// Incremental encoder. Validates every event against the header and the
/// per-pixel strictly-increasing timestamp rule (first event of a pixel must
/// have t >= 1, since its predecessor time is 0).
class StreamWriter {
 public:
  StreamWriter(std::ostream& out, const StreamMeta& meta)
      : out_(out), meta_(meta), record_(record_size(meta)), last_t_(meta.sample_count(), 0) {
    if (auto err = validate(meta); !err.empty()) throw ArgumentError("stream meta: " + err);
    const auto h = encode_header(meta);
    write_bytes(h.data(), h.size());
  }

  void write(const Event& e) {
    if (auto err = validate(e, meta_); !err.empty()) throw EncodeError(err, count_);
    auto& last = last_t_[meta_.pixel_index(e)];
    if (e.t <= last)
      throw EncodeError("timestamp " + std::to_string(e.t) + " not after pixel's previous " +
                            std::to_string(last),
                        count_);
    last = e.t;
    std::array<std::uint8_t, 10> r{};
    detail::put_u16(&r[0], e.x);
    detail::put_u16(&r[2], e.y);
    std::size_t o = 4;
    if (meta_.channels == 3) r[o++] = e.c;
    r[o++] = e.d;
    detail::put_u32(&r[o], e.t);
    write_bytes(r.data(), record_);
    ++count_;
  }

  void write(std::span<const Event> events) {
    for (const auto& e : events) write(e);
  }

  void flush() {
    out_.flush();
    if (!out_) throw SinkError("failed to flush event stream");
  }

  const StreamMeta& meta() const noexcept { return meta_; }
  std::uint64_t events_written() const noexcept { return count_; }
  std::uint64_t bytes_written() const noexcept { return bytes_; }

 private:
  void write_bytes(const std::uint8_t* p, std::size_t n) {
    out_.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out_) throw SinkError("failed to write event stream");
    bytes_ += n;
  }

  std::ostream& out_;
  StreamMeta meta_;
  std::size_t record_;
  std::vector<Tick> last_t_;
  std::uint64_t count_ = 0;
  std::uint64_t bytes_ = 0;
};

/// Writes header and events; returns the total number of bytes written.
inline std::uint64_t write_stream(const StreamMeta& meta, std::span<const Event> events, std::ostream& sink) {
  StreamWriter w(sink, meta);
  w.write(events);
  w.flush();
  return w.bytes_written();
}

/// Lazy decoder: the header is read on construction, events one at a time.
class StreamReader {
 public:
  explicit StreamReader(std::istream& in) : in_(in), meta_(read_header(in)), record_(record_size(meta_)) {}

  const StreamMeta& meta() const noexcept { return meta_; }
  std::uint64_t bytes_consumed() const noexcept { return offset_; }
  std::uint64_t events_read() const noexcept { return count_; }

  /// Next event, or nullopt at a clean end of stream.
  std::optional<Event> next() {
    std::array<std::uint8_t, 10> r{};
    in_.read(reinterpret_cast<char*>(r.data()), static_cast<std::streamsize>(record_));
    const auto got = static_cast<std::size_t>(in_.gcount());
    if (got == 0) return std::nullopt;
    if (got < record_) throw TruncationError("truncated event record " + std::to_string(count_), offset_);
    Event e;
    e.x = detail::get_u16(&r[0]);
    e.y = detail::get_u16(&r[2]);
    std::size_t o = 4;
    if (meta_.channels == 3) e.c = r[o++];
    e.d = r[o++];
    e.t = detail::get_u32(&r[o]);
    if (auto err = validate(e, meta_); !err.empty())
      throw CorruptionError("event record " + std::to_string(count_) + " at byte offset " +
                            std::to_string(offset_) + ": " + err);
    offset_ += record_;
    ++count_;
    return e;
  }

  /// Reads every remaining event.
  std::vector<Event> read_all() {
    std::vector<Event> out;
    while (auto e = next()) out.push_back(*e);
    return out;
  }

 private:
  std::istream& in_;
  StreamMeta meta_;
  std::size_t record_;
  std::uint64_t offset_ = kHeaderSize;
  std::uint64_t count_ = 0;
};

struct DecodedStream {
  StreamMeta meta;
  std::vector<Event> events;
};

inline DecodedStream read_stream(std::istream& source) {
  StreamReader r(source);
  DecodedStream out{r.meta(), {}};
  out.events = r.read_all();
  return out;
}

}  // namespace evtsuite
