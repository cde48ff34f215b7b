#pragma once

// 8-bit images and the framed file formats they travel in: binary PGM/PPM
// (P5/P6, maxval 255) and a Y4M subset (mono and 4:4:4 only).

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "evtsuite/types.hpp"

namespace evtsuite {

/// Interleaved 8-bit image: sample (x, y, c) lives at (y * width + x) * channels + c.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> data;

  Image() = default;
  Image(int w, int h, int c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  std::size_t index(int x, int y, int c = 0) const noexcept {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  std::uint8_t& at(int x, int y, int c = 0) noexcept { return data[index(x, y, c)]; }
  std::uint8_t at(int x, int y, int c = 0) const noexcept { return data[index(x, y, c)]; }
  bool same_shape(const Image& o) const noexcept {
    return width == o.width && height == o.height && channels == o.channels;
  }

  friend bool operator==(const Image&, const Image&) = default;
};

namespace detail {

// Reads one whitespace-delimited PNM header token, skipping '#' comments.
inline std::string pnm_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

inline int pnm_int(std::istream& in, const char* what) {
  const auto tok = pnm_token(in);
  try {
    std::size_t pos = 0;
    const int v = std::stoi(tok, &pos);
    if (pos != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw FormatError(std::string("PNM: bad ") + what + " '" + tok + "'");
  }
}

}  // namespace detail

inline Image read_pnm(std::istream& in) {
  const auto magic = detail::pnm_token(in);
  int channels;
  if (magic == "P5")
    channels = 1;
  else if (magic == "P6")
    channels = 3;
  else
    throw FormatError("PNM: unsupported magic '" + magic + "' (need binary P5 or P6)");
  const int w = detail::pnm_int(in, "width");
  const int h = detail::pnm_int(in, "height");
  const int maxval = detail::pnm_int(in, "maxval");
  if (w < 1 || h < 1 || w > 65535 || h > 65535) throw FormatError("PNM: bad dimensions");
  if (maxval != 255) throw FormatError("PNM: maxval must be 255, got " + std::to_string(maxval));
  Image img(w, h, channels);
  in.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
  if (static_cast<std::size_t>(in.gcount()) != img.data.size()) throw FormatError("PNM: truncated pixel data");
  return img;
}

inline Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return read_pnm(in);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline void write_pnm(std::ostream& out, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw ArgumentError("PNM: channels must be 1 or 3");
  out << (img.channels == 1 ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
  if (!out) throw SinkError("failed to write PNM image");
}

inline void write_pnm(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw SinkError("cannot create " + path.string());
  write_pnm(out, img);
}

// ---------------------------------------------------------------------------
// Y4M subset
// ---------------------------------------------------------------------------

struct Y4mHeader {
  int width = 0;
  int height = 0;
  int channels = 1;
  int fps_num = 30;
  int fps_den = 1;
};

/// Reads a YUV4MPEG2 stream restricted to Cmono and C444. 4:4:4 planes are
/// exposed as three channels (Y, U, V) without color conversion.
class Y4mReader {
 public:
  explicit Y4mReader(std::istream& in) : in_(in) {
    std::string line;
    if (!std::getline(in_, line)) throw FormatError("Y4M: empty input");
    std::istringstream ss(line);
    std::string tok;
    ss >> tok;
    if (tok != "YUV4MPEG2") throw FormatError("Y4M: bad signature '" + tok + "'");
    bool have_colorspace = false;
    while (ss >> tok) {
      const char tag = tok[0];
      const auto val = tok.substr(1);
      try {
        switch (tag) {
          case 'W': header_.width = std::stoi(val); break;
          case 'H': header_.height = std::stoi(val); break;
          case 'F': {
            const auto colon = val.find(':');
            if (colon == std::string::npos) throw FormatError("Y4M: bad frame rate '" + val + "'");
            header_.fps_num = std::stoi(val.substr(0, colon));
            header_.fps_den = std::stoi(val.substr(colon + 1));
            break;
          }
          case 'C':
            have_colorspace = true;
            if (val == "mono")
              header_.channels = 1;
            else if (val == "444")
              header_.channels = 3;
            else
              throw FormatError("Y4M: unsupported colorspace C" + val + " (only mono and 444)");
            break;
          case 'I':
            if (val != "p" && val != "?") throw FormatError("Y4M: interlaced input not supported");
            break;
          default: break;  // A (aspect), X (comments)
        }
      } catch (const std::logic_error&) {
        throw FormatError("Y4M: bad header field '" + tok + "'");
      }
    }
    if (!have_colorspace) throw FormatError("Y4M: missing colorspace tag (default 4:2:0 is not supported)");
    if (header_.width < 1 || header_.height < 1 || header_.width > 65535 || header_.height > 65535)
      throw FormatError("Y4M: bad dimensions");
    if (header_.fps_num < 1 || header_.fps_den < 1) throw FormatError("Y4M: bad frame rate");
  }

  const Y4mHeader& header() const noexcept { return header_; }

  std::optional<Image> next() {
    std::string line;
    if (!std::getline(in_, line)) return std::nullopt;
    if (line.rfind("FRAME", 0) != 0)
      throw FormatError("Y4M: expected FRAME marker at frame " + std::to_string(frames_));
    const std::size_t plane = static_cast<std::size_t>(header_.width) * header_.height;
    planar_.resize(plane * header_.channels);
    in_.read(reinterpret_cast<char*>(planar_.data()), static_cast<std::streamsize>(planar_.size()));
    if (static_cast<std::size_t>(in_.gcount()) != planar_.size())
      throw FormatError("Y4M: truncated frame " + std::to_string(frames_));
    Image img(header_.width, header_.height, header_.channels);
    for (std::size_t i = 0; i < plane; ++i)
      for (int c = 0; c < header_.channels; ++c) img.data[i * header_.channels + c] = planar_[c * plane + i];
    ++frames_;
    return img;
  }

 private:
  std::istream& in_;
  Y4mHeader header_;
  std::vector<std::uint8_t> planar_;
  std::size_t frames_ = 0;
};

inline void write_y4m_header(std::ostream& out, int w, int h, int channels, int fps) {
  out << "YUV4MPEG2 W" << w << " H" << h << " F" << fps << ":1 Ip A1:1 " << (channels == 1 ? "Cmono" : "C444")
      << '\n';
}

inline void write_y4m_frame(std::ostream& out, const Image& img) {
  out << "FRAME\n";
  const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
  for (int c = 0; c < img.channels; ++c)
    for (std::size_t i = 0; i < plane; ++i) out.put(static_cast<char>(img.data[i * img.channels + c]));
  if (!out) throw SinkError("failed to write Y4M frame");
}

}  // namespace evtsuite
