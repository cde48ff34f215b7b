#pragma once

// Source adapters. Framed sources yield whole images, each integrated over one
// reference interval; DVS sources yield polarity events on absolute ticks.
//
// DVS text format:
//   DVS <width> <height> <ticks_per_second> <c_threshold>
//   <t> <x> <y> <p>        (one per line, p in {+1, -1}, t non-decreasing)
// Blank lines and lines starting with '#' are ignored.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "evtsuite/image.hpp"
#include "evtsuite/types.hpp"

namespace evtsuite {

enum class SourceFormat { FramedSequence, Y4mLike, DvsText };

class FrameSource {
 public:
  virtual ~FrameSource() = default;
  virtual int width() const = 0;
  virtual int height() const = 0;
  virtual int channels() const = 0;
  /// Frames per second of the source, used to derive ticks_per_second.
  virtual double fps() const = 0;
  virtual std::optional<Image> next() = 0;
  virtual SourceFormat format() const = 0;
};

/// Numbered binary PGM/PPM files in a directory, taken in lexicographic order.
class PnmSequenceSource final : public FrameSource {
 public:
  explicit PnmSequenceSource(const std::filesystem::path& dir, double fps = 30.0) : fps_(fps) {
    std::error_code ec;
    if (!std::filesystem::is_directory(dir, ec)) throw FormatError(dir.string() + " is not a directory");
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
      const auto ext = entry.path().extension().string();
      if (entry.is_regular_file() && (ext == ".pgm" || ext == ".ppm" || ext == ".pnm"))
        files_.push_back(entry.path());
    }
    std::sort(files_.begin(), files_.end());
    if (files_.empty()) throw FormatError(dir.string() + ": no .pgm/.ppm frames found");
    first_ = read_pnm(files_.front());
    w_ = first_->width;
    h_ = first_->height;
    c_ = first_->channels;
  }

  int width() const override { return w_; }
  int height() const override { return h_; }
  int channels() const override { return c_; }
  double fps() const override { return fps_; }
  SourceFormat format() const override { return SourceFormat::FramedSequence; }

  std::optional<Image> next() override {
    if (index_ >= files_.size()) return std::nullopt;
    Image img = first_ ? std::move(*first_) : read_pnm(files_[index_]);
    first_.reset();
    if (img.width != width() || img.height != height() || img.channels != channels())
      throw FormatError("frame " + std::to_string(index_) + " (" + files_[index_].filename().string() +
                        ") has different dimensions than the first frame");
    ++index_;
    return img;
  }

 private:
  std::vector<std::filesystem::path> files_;
  std::optional<Image> first_;
  std::size_t index_ = 0;
  double fps_;
  int w_ = 0, h_ = 0, c_ = 1;
};

class Y4mSource final : public FrameSource {
 public:
  explicit Y4mSource(const std::filesystem::path& path) : in_(path, std::ios::binary) {
    if (!in_) throw FormatError("cannot open " + path.string());
    reader_.emplace(in_);
  }

  int width() const override { return reader_->header().width; }
  int height() const override { return reader_->header().height; }
  int channels() const override { return reader_->header().channels; }
  double fps() const override {
    return static_cast<double>(reader_->header().fps_num) / reader_->header().fps_den;
  }
  SourceFormat format() const override { return SourceFormat::Y4mLike; }
  std::optional<Image> next() override { return reader_->next(); }

 private:
  std::ifstream in_;
  std::optional<Y4mReader> reader_;
};

/// Frames held in memory; used by tests, benchmarks and the session service.
class MemoryFrameSource final : public FrameSource {
 public:
  MemoryFrameSource(std::vector<Image> frames, double fps = 30.0, int width = 0, int height = 0, int channels = 1)
      : frames_(std::move(frames)), fps_(fps) {
    if (!frames_.empty()) {
      w_ = frames_.front().width;
      h_ = frames_.front().height;
      c_ = frames_.front().channels;
    } else {
      w_ = width;
      h_ = height;
      c_ = channels;
    }
  }

  int width() const override { return w_; }
  int height() const override { return h_; }
  int channels() const override { return c_; }
  double fps() const override { return fps_; }
  SourceFormat format() const override { return SourceFormat::FramedSequence; }
  std::optional<Image> next() override {
    if (index_ >= frames_.size()) return std::nullopt;
    return frames_[index_++];
  }

 private:
  std::vector<Image> frames_;
  std::size_t index_ = 0;
  double fps_;
  int w_, h_, c_;
};

// ---------------------------------------------------------------------------
// DVS
// ---------------------------------------------------------------------------

struct DvsEvent {
  Tick t = 0;
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  int polarity = 1;
};

struct DvsHeader {
  int width = 0;
  int height = 0;
  std::uint32_t ticks_per_second = 1'000'000;
  double c_threshold = std::log(1.25);
};

class DvsSource {
 public:
  virtual ~DvsSource() = default;
  virtual const DvsHeader& header() const = 0;
  virtual std::optional<DvsEvent> next() = 0;
};

class DvsTextSource final : public DvsSource {
 public:
  explicit DvsTextSource(std::unique_ptr<std::istream> in) : in_(std::move(in)) { parse_header(); }
  explicit DvsTextSource(const std::filesystem::path& path)
      : in_(std::make_unique<std::ifstream>(path)) {
    if (!*in_) throw FormatError("cannot open " + path.string());
    parse_header();
  }

  const DvsHeader& header() const override { return header_; }

  std::optional<DvsEvent> next() override {
    std::string line;
    while (std::getline(*in_, line)) {
      ++line_no_;
      if (line.empty() || line[0] == '#' || line.find_first_not_of(" \t\r") == std::string::npos) continue;
      std::istringstream ss(line);
      long long t, x, y;
      std::string p;
      if (!(ss >> t >> x >> y >> p)) fail("expected 't x y p'");
      if (t < 0 || t > 0xFFFFFFFFLL) fail("timestamp out of range");
      if (x < 0 || x >= header_.width || y < 0 || y >= header_.height) fail("coordinates out of range");
      int pol;
      if (p == "+1" || p == "1")
        pol = 1;
      else if (p == "-1")
        pol = -1;
      else
        fail("polarity must be +1 or -1");
      if (static_cast<Tick>(t) < last_t_) fail("timestamps must be non-decreasing");
      last_t_ = static_cast<Tick>(t);
      return DvsEvent{static_cast<Tick>(t), static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y), pol};
    }
    return std::nullopt;
  }

 private:
  [[noreturn]] void fail(const std::string& why) const {
    throw FormatError("DVS line " + std::to_string(line_no_) + ": " + why);
  }

  void parse_header() {
    std::string line;
    if (!std::getline(*in_, line)) throw FormatError("DVS: empty input");
    ++line_no_;
    std::istringstream ss(line);
    std::string tag;
    long long w, h, tps;
    double c;
    if (!(ss >> tag >> w >> h >> tps >> c) || tag != "DVS")
      fail("header must be 'DVS <width> <height> <ticks_per_second> <c_threshold>'");
    if (w < 1 || h < 1 || w > 65535 || h > 65535) fail("bad dimensions");
    if (tps < 1 || tps > 0xFFFFFFFFLL) fail("bad ticks_per_second");
    if (!(c > 0.0) || !std::isfinite(c)) fail("c_threshold must be positive");
    header_ = DvsHeader{static_cast<int>(w), static_cast<int>(h), static_cast<std::uint32_t>(tps), c};
  }

  std::unique_ptr<std::istream> in_;
  DvsHeader header_;
  std::size_t line_no_ = 0;
  Tick last_t_ = 0;
};

class MemoryDvsSource final : public DvsSource {
 public:
  MemoryDvsSource(DvsHeader header, std::vector<DvsEvent> events)
      : header_(header), events_(std::move(events)) {}
  const DvsHeader& header() const override { return header_; }
  std::optional<DvsEvent> next() override {
    if (index_ >= events_.size()) return std::nullopt;
    return events_[index_++];
  }

 private:
  DvsHeader header_;
  std::vector<DvsEvent> events_;
  std::size_t index_ = 0;
};

using AnySource = std::variant<std::unique_ptr<FrameSource>, std::unique_ptr<DvsSource>>;

/// Picks an adapter from the path: a directory is a PGM/PPM sequence, *.y4m
/// is Y4M, *.dvs / *.txt is DVS text. Other files are sniffed by content.
inline AnySource open_source(const std::filesystem::path& path, double framed_fps = 30.0) {
  std::error_code ec;
  if (std::filesystem::is_directory(path, ec)) return std::make_unique<PnmSequenceSource>(path, framed_fps);
  if (!std::filesystem::exists(path, ec)) throw FormatError(path.string() + ": no such file or directory");
  std::ifstream probe(path, std::ios::binary);
  char magic[9] = {};
  probe.read(magic, 9);
  const std::string head(magic, static_cast<std::size_t>(probe.gcount()));
  if (head.rfind("YUV4MPEG2", 0) == 0) return std::make_unique<Y4mSource>(path);
  if (head.rfind("DVS", 0) == 0) return std::make_unique<DvsTextSource>(path);
  throw FormatError(path.string() + ": unrecognized source format (expected frame directory, Y4M, or DVS text)");
}

}  // namespace evtsuite
