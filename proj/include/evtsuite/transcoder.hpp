#pragma once

// Frame/DVS to event transcoding over a grid of PixelStates.
//
// Pixels are partitioned into contiguous row bands. Each band is integrated
// by one worker into its own buffer and the buffers are concatenated in band
// order, so the output is row-major within every sample boundary and does not
// depend on the number of workers.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <span>
#include <thread>
#include <vector>

#include "evtsuite/image.hpp"
#include "evtsuite/params.hpp"
#include "evtsuite/pixel.hpp"
#include "evtsuite/sources.hpp"
#include "evtsuite/types.hpp"

namespace evtsuite {

struct PixelCoord {
  int x = 0;
  int y = 0;
  friend bool operator==(const PixelCoord&, const PixelCoord&) = default;
};

/// Worker count: hardware concurrency, capped by EVTSUITE_THREADS when set.
inline unsigned default_workers() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("EVTSUITE_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) n = std::min(n, static_cast<unsigned>(cap));
  }
  return n;
}

class Transcoder {
 public:
  Transcoder(const StreamMeta& meta, const ParamSet& params, unsigned workers = 0)
      : meta_(meta),
        params_(params),
        integrator_(meta.ref_interval),
        states_(meta.sample_count()),
        canvas_(meta.width, meta.height, meta.channels),
        workers_(workers == 0 ? default_workers() : workers) {
    if (auto err = validate(meta); !err.empty()) throw ArgumentError("stream meta: " + err);
    if (auto err = validate(params, meta.ref_interval); !err.empty()) throw ArgumentError("params: " + err);
    workers_ = std::clamp<unsigned>(workers_, 1, meta.height);
    const unsigned rows_per_band = (meta.height + workers_ - 1) / workers_;
    for (unsigned r = 0; r < meta.height; r += rows_per_band)
      bands_.push_back({r, std::min<unsigned>(r + rows_per_band, meta.height)});
    band_out_.resize(bands_.size());
    band_diag_.resize(bands_.size());
    next_sweep_ = meta.ref_interval;
  }

  const StreamMeta& meta() const noexcept { return meta_; }
  const ParamSet& params() const noexcept { return pending_ ? *pending_ : params_; }
  const ParamSet& active_params() const noexcept { return params_; }
  Tick now() const noexcept { return now_; }
  std::uint64_t events_emitted() const noexcept { return events_emitted_; }
  std::uint64_t frames_consumed() const noexcept { return frames_; }
  std::uint64_t clamped_levels() const noexcept { return clamped_; }
  unsigned workers() const noexcept { return workers_; }
  bool finished() const noexcept { return finished_; }

  /// Latest input level of every sample (framed) or latent level (DVS).
  const Image& canvas() const noexcept { return canvas_; }

  const PixelState& state(int x, int y, int c = 0) const {
    return states_[(static_cast<std::size_t>(y) * meta_.width + x) * meta_.channels + c];
  }

  /// Takes effect at the next sample boundary, never mid-interval.
  void set_params(const ParamSet& p) {
    if (auto err = validate(p, meta_.ref_interval); !err.empty()) throw ArgumentError("params: " + err);
    pending_ = p;
  }

  /// Integrates one frame over [now, now + ref_interval).
  std::span<const Event> push_frame(const Image& frame) {
    if (finished_) throw ArgumentError("transcoder already finished");
    if (frame.width != meta_.width || frame.height != meta_.height || frame.channels != meta_.channels)
      throw ArgumentError("frame dimensions do not match stream meta");
    out_.clear();
    apply_pending_params();
    const Tick now = now_;
    const Tick span = meta_.ref_interval;
    run_bands([&](std::size_t b, unsigned y0, unsigned y1) {
      auto& out = band_out_[b];
      auto& diag = band_diag_[b];
      const int ch = meta_.channels;
      for (unsigned y = y0; y < y1; ++y) {
        for (unsigned x = 0; x < meta_.width; ++x) {
          for (int c = 0; c < ch; ++c) {
            const std::size_t i = (std::size_t{y} * meta_.width + x) * ch + c;
            integrator_.integrate_frame_sample(states_[i], frame.data[i], span, params_, now,
                                               PixelAddress{static_cast<std::uint16_t>(x),
                                                            static_cast<std::uint16_t>(y),
                                                            static_cast<std::uint8_t>(c)},
                                               out, &diag);
          }
        }
      }
    });
    canvas_.data = frame.data;
    now_ += span;
    ++frames_;
    return collect();
  }

  /// Integrates one DVS polarity event. Idle pixels are swept forward at every
  /// reference-interval boundary the event passes.
  std::span<const Event> push_dvs(const DvsEvent& ev, double c_threshold) {
    if (finished_) throw ArgumentError("transcoder already finished");
    if (ev.x >= meta_.width || ev.y >= meta_.height)
      throw ArgumentError("DVS event (" + std::to_string(ev.x) + "," + std::to_string(ev.y) + ") out of range");
    if (ev.t < now_)
      throw ArgumentError("DVS event at (" + std::to_string(ev.x) + "," + std::to_string(ev.y) +
                          ") out of order: t=" + std::to_string(ev.t) + " < " + std::to_string(now_));
    out_.clear();
    if (ev.t >= next_sweep_) {
      const Tick boundary = ev.t - ev.t % meta_.ref_interval;
      sweep_dvs(boundary);
      next_sweep_ = boundary + meta_.ref_interval;
    }
    apply_pending_params();
    auto& s = states_[(std::size_t{ev.y} * meta_.width + ev.x) * meta_.channels];
    band_out_[0].clear();
    integrator_.integrate_dvs_sample(s, ev.polarity, ev.t, c_threshold, params_,
                                     PixelAddress{ev.x, ev.y, 0}, band_out_[0]);
    out_.insert(out_.end(), band_out_[0].begin(), band_out_[0].end());
    band_out_[0].clear();
    canvas_.at(ev.x, ev.y) = static_cast<std::uint8_t>(std::lround(s.latent_level));
    now_ = ev.t;
    events_emitted_ += out_.size();
    return out_;
  }

  /// Brings every DVS pixel forward to `t` (forced flushes only).
  std::span<const Event> advance_dvs_to(Tick t) {
    out_.clear();
    if (t > now_) {
      sweep_dvs(t);
      now_ = t;
      next_sweep_ = t - t % meta_.ref_interval + meta_.ref_interval;
    }
    events_emitted_ += out_.size();
    return out_;
  }

  /// Flushes every pixel at now(). Further pushes are rejected.
  std::span<const Event> finish() {
    out_.clear();
    if (finished_) return out_;
    apply_pending_params();
    if (meta_.source_kind == SourceKind::Dvs) sweep_dvs_locked(now_);
    flush_all(now_);
    finished_ = true;
    return collect_merged();
  }

  /// Lowers the threshold around each coordinate for the boost duration.
  void boost_features(std::span<const PixelCoord> coords) {
    const FeatureBoost boost = params_.feature_boost ? *params_.feature_boost : default_feature_boost(meta_.ref_interval);
    const int r = boost.radius;
    for (const auto& p : coords) {
      for (int dy = -r; dy <= r; ++dy) {
        const int y = p.y + dy;
        if (y < 0 || y >= meta_.height) continue;
        for (int dx = -r; dx <= r; ++dx) {
          const int x = p.x + dx;
          if (x < 0 || x >= meta_.width || dx * dx + dy * dy > r * r) continue;
          for (int c = 0; c < meta_.channels; ++c) {
            auto& s = states_[(static_cast<std::size_t>(y) * meta_.width + x) * meta_.channels + c];
            s.effective_m = boost.m_override;
            s.boost_expiry = now_ + boost.duration;
          }
        }
      }
    }
  }

 private:
  struct Band {
    unsigned y0, y1;
  };

  template <class F>
  void run_bands(F&& f) {
    if (bands_.size() == 1) {
      f(std::size_t{0}, bands_[0].y0, bands_[0].y1);
      return;
    }
    std::vector<std::jthread> threads;
    threads.reserve(bands_.size() - 1);
    for (std::size_t b = 1; b < bands_.size(); ++b)
      threads.emplace_back([&f, this, b] { f(b, bands_[b].y0, bands_[b].y1); });
    f(std::size_t{0}, bands_[0].y0, bands_[0].y1);
  }

  std::span<const Event> collect() {
    for (auto& d : band_diag_) {
      clamped_ += d.clamped_levels;
      d.clamped_levels = 0;
    }
    return collect_merged();
  }

  std::span<const Event> collect_merged() {
    for (auto& b : band_out_) {
      out_.insert(out_.end(), b.begin(), b.end());
      b.clear();
    }
    events_emitted_ += out_.size();
    return out_;
  }

  void flush_all(Tick at) {
    const PixelMode mode = params_.mode;
    run_bands([&](std::size_t b, unsigned y0, unsigned y1) {
      auto& out = band_out_[b];
      for (unsigned y = y0; y < y1; ++y)
        for (unsigned x = 0; x < meta_.width; ++x)
          for (int c = 0; c < meta_.channels; ++c) {
            auto& s = states_[(std::size_t{y} * meta_.width + x) * meta_.channels + c];
            integrator_.flush(s, mode, at, PixelAddress{static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y),
                                                        static_cast<std::uint8_t>(c)},
                              out);
            s.last_time = at;
          }
    });
  }

  void apply_pending_params() {
    if (!pending_) return;
    if (pending_->mode != params_.mode) {
      // Runs cannot change representation mid-flight: close them first.
      if (meta_.source_kind == SourceKind::Dvs) sweep_dvs_locked(now_);
      flush_all(now_);
      for (auto& b : band_out_) {
        out_.insert(out_.end(), b.begin(), b.end());
        b.clear();
      }
    }
    params_ = *pending_;
    pending_.reset();
  }

  void sweep_dvs(Tick t) {
    apply_pending_params();
    sweep_dvs_locked(t);
    for (auto& b : band_out_) {
      out_.insert(out_.end(), b.begin(), b.end());
      b.clear();
    }
  }

  void sweep_dvs_locked(Tick t) {
    run_bands([&](std::size_t b, unsigned y0, unsigned y1) {
      auto& out = band_out_[b];
      for (unsigned y = y0; y < y1; ++y)
        for (unsigned x = 0; x < meta_.width; ++x) {
          auto& s = states_[(std::size_t{y} * meta_.width + x) * meta_.channels];
          integrator_.advance_dvs(s, t, params_,
                                  PixelAddress{static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y), 0}, out);
        }
    });
  }

  StreamMeta meta_;
  ParamSet params_;
  std::optional<ParamSet> pending_;
  PixelIntegrator integrator_;
  std::vector<PixelState> states_;
  Image canvas_;
  unsigned workers_;
  std::vector<Band> bands_;
  std::vector<std::vector<Event>> band_out_;
  std::vector<IntegrationDiagnostics> band_diag_;
  std::vector<Event> out_;
  Tick now_ = 0;
  Tick next_sweep_ = 0;
  std::uint64_t events_emitted_ = 0;
  std::uint64_t frames_ = 0;
  std::uint64_t clamped_ = 0;
  bool finished_ = false;
};

// ---------------------------------------------------------------------------
// Whole-source driver
// ---------------------------------------------------------------------------

struct TranscodeReport {
  std::uint64_t events_emitted = 0;
  std::uint64_t frames_consumed = 0;
  std::vector<std::uint64_t> interval_event_counts;
  std::uint64_t clamped_levels = 0;
};

using EventSink = std::function<void(std::span<const Event>)>;

/// Called after each reference interval with the latest intensity canvas and
/// the events emitted in that interval; returns pixels to boost.
using FeatureFeedback = std::function<std::vector<PixelCoord>(const Image&, std::span<const Event>)>;

/// Stream meta for a framed source: ticks_per_second = ref_interval * fps.
inline StreamMeta framed_meta(const FrameSource& src, const ParamSet& params, int crf,
                              Tick ref_interval = kDefaultRefInterval) {
  StreamMeta m;
  if (src.width() < 1 || src.height() < 1 || src.width() > 65535 || src.height() > 65535)
    throw ArgumentError("source dimensions out of range");
  m.width = static_cast<std::uint16_t>(src.width());
  m.height = static_cast<std::uint16_t>(src.height());
  m.channels = static_cast<std::uint8_t>(src.channels());
  m.ref_interval = ref_interval;
  const double tps = std::round(static_cast<double>(ref_interval) * src.fps());
  if (!(tps >= 1.0) || tps > 4294967295.0) throw ArgumentError("source frame rate out of range");
  m.ticks_per_second = static_cast<std::uint32_t>(tps);
  m.delta_t_max = params.delta_t_max;
  m.source_kind = SourceKind::Framed;
  m.crf = static_cast<std::uint8_t>(std::clamp(crf, 0, 9));
  return m;
}

inline StreamMeta dvs_meta(const DvsSource& src, const ParamSet& params, int crf,
                           Tick ref_interval = kDefaultRefInterval) {
  const auto& h = src.header();
  StreamMeta m;
  m.width = static_cast<std::uint16_t>(h.width);
  m.height = static_cast<std::uint16_t>(h.height);
  m.channels = 1;
  m.ref_interval = ref_interval;
  m.ticks_per_second = h.ticks_per_second;
  m.delta_t_max = params.delta_t_max;
  m.source_kind = SourceKind::Dvs;
  m.crf = static_cast<std::uint8_t>(std::clamp(crf, 0, 9));
  return m;
}

inline TranscodeReport transcode(FrameSource& source, const ParamSet& params, const StreamMeta& meta,
                                 const EventSink& sink, const FeatureFeedback& feedback = {},
                                 unsigned workers = 0) {
  if (source.width() != meta.width || source.height() != meta.height || source.channels() != meta.channels)
    throw ArgumentError("source dimensions " + std::to_string(source.width()) + "x" +
                        std::to_string(source.height()) + "x" + std::to_string(source.channels()) +
                        " do not match stream meta");
  Transcoder tx(meta, params, workers);
  TranscodeReport report;
  for (;;) {
    std::optional<Image> frame;
    try {
      frame = source.next();
    } catch (const FormatError& e) {
      throw FormatError("frame " + std::to_string(tx.frames_consumed()) + ": " + e.what());
    }
    if (!frame) break;
    const auto events = tx.push_frame(*frame);
    report.interval_event_counts.push_back(events.size());
    if (!events.empty()) sink(events);
    if (feedback) {
      const auto coords = feedback(tx.canvas(), events);
      if (!coords.empty()) tx.boost_features(coords);
    }
  }
  const auto tail = tx.finish();
  if (!tail.empty()) {
    sink(tail);
    if (report.interval_event_counts.empty())
      report.interval_event_counts.push_back(tail.size());
    else
      report.interval_event_counts.back() += tail.size();
  }
  report.events_emitted = tx.events_emitted();
  report.frames_consumed = tx.frames_consumed();
  report.clamped_levels = tx.clamped_levels();
  return report;
}

/// DVS driver. frames_consumed counts reference intervals covered.
inline TranscodeReport transcode(DvsSource& source, const ParamSet& params, const StreamMeta& meta,
                                 const EventSink& sink, const FeatureFeedback& feedback = {},
                                 unsigned workers = 0) {
  const auto& h = source.header();
  if (h.width != meta.width || h.height != meta.height || meta.channels != 1)
    throw ArgumentError("DVS source dimensions do not match stream meta");
  Transcoder tx(meta, params, workers);
  TranscodeReport report;
  std::uint64_t interval_events = 0;
  Tick interval_end = meta.ref_interval;
  auto close_intervals = [&](Tick t) {
    while (t >= interval_end) {
      report.interval_event_counts.push_back(interval_events);
      interval_events = 0;
      interval_end += meta.ref_interval;
    }
  };
  for (;;) {
    std::optional<DvsEvent> ev;
    try {
      ev = source.next();
    } catch (const FormatError& e) {
      throw FormatError(std::string("DVS source: ") + e.what());
    }
    if (!ev) break;
    if (ev->t >= interval_end) {
      const Tick boundary = ev->t - ev->t % meta.ref_interval;
      const auto swept = tx.advance_dvs_to(boundary);
      interval_events += swept.size();
      if (!swept.empty()) sink(swept);
      close_intervals(ev->t);
      if (feedback) {
        const auto coords = feedback(tx.canvas(), swept);
        if (!coords.empty()) tx.boost_features(coords);
      }
    }
    const auto events = tx.push_dvs(*ev, h.c_threshold);
    interval_events += events.size();
    if (!events.empty()) sink(events);
  }
  const auto tail = tx.finish();
  interval_events += tail.size();
  if (!tail.empty()) sink(tail);
  report.interval_event_counts.push_back(interval_events);
  report.events_emitted = tx.events_emitted();
  report.frames_consumed = report.interval_event_counts.size();
  return report;
}

}  // namespace evtsuite
