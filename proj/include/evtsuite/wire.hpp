#pragma once

// Length-delimited JSON framing: u32 little-endian byte count, then UTF-8 JSON.

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "evtsuite/types.hpp"

namespace evtsuite::wire {

inline constexpr std::uint32_t kMaxFrameBytes = 64u << 20;

inline std::string encode_frame(const nlohmann::json& msg) {
  const std::string body = msg.dump();
  if (body.size() > kMaxFrameBytes) throw ArgumentError("message exceeds frame limit");
  std::string out(4, '\0');
  const auto n = static_cast<std::uint32_t>(body.size());
  for (int i = 0; i < 4; ++i) out[i] = static_cast<char>((n >> (8 * i)) & 0xFF);
  return out + body;
}

/// Incremental decoder for a byte stream of frames.
class FrameDecoder {
 public:
  void feed(std::string_view bytes) { buffer_.append(bytes); }

  /// Next complete frame. Malformed JSON is returned as a discarded value
  /// so the caller can answer with an error; an oversized length throws.
  std::optional<nlohmann::json> next() {
    if (buffer_.size() < 4) return std::nullopt;
    std::uint32_t n = 0;
    for (int i = 0; i < 4; ++i) n |= std::uint32_t{static_cast<std::uint8_t>(buffer_[i])} << (8 * i);
    if (n > kMaxFrameBytes) throw FormatError("frame length " + std::to_string(n) + " exceeds limit");
    if (buffer_.size() < 4 + std::size_t{n}) return std::nullopt;
    auto msg = nlohmann::json::parse(buffer_.begin() + 4, buffer_.begin() + 4 + n, nullptr, false);
    buffer_.erase(0, 4 + std::size_t{n});
    return msg;
  }

  std::size_t buffered() const noexcept { return buffer_.size(); }

 private:
  std::string buffer_;
};

}  // namespace evtsuite::wire
