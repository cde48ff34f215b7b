#pragma once

// Control-service session: a pure message handler plus the worker that runs
// a live transcode or playback and publishes previews, metrics and rates.

#include <json.hpp>

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <stop_token>
#include <string>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include "evtsuite/codec.hpp"
#include "evtsuite/fast.hpp"
#include "evtsuite/metrics.hpp"
#include "evtsuite/params.hpp"
#include "evtsuite/reconstruct.hpp"
#include "evtsuite/sources.hpp"
#include "evtsuite/transcoder.hpp"

namespace evtsuite::service {

using json = nlohmann::json;

inline constexpr int kProtocolVersion = 1;

enum class Phase { Idle, Transcoding, Playing, Paused, Done, Error };

inline const char* to_string(Phase p) noexcept {
  switch (p) {
    case Phase::Idle: return "Idle";
    case Phase::Transcoding: return "Transcoding";
    case Phase::Playing: return "Playing";
    case Phase::Paused: return "Paused";
    case Phase::Done: return "Done";
    case Phase::Error: return "Error";
  }
  return "Error";
}

enum class Activity { None, Transcode, Playback };

struct MetricPoint {
  Tick tick = 0;
  double mse = 0.0;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct RatePoint {
  Tick tick = 0;
  double source_bits_per_sec = 0.0;
  double event_bits_per_sec = 0.0;
};

struct SessionState {
  std::uint64_t session_id = 0;
  Phase phase = Phase::Idle;
  /// What the session is (or was last) doing; Paused resumes into it.
  Activity activity = Activity::None;
  Tick ref_interval = kDefaultRefInterval;
  ParamSet params = params_from_crf(kDefaultCrf, kDefaultRefInterval);
  /// Absent once parameters were set explicitly.
  std::optional<int> crf = kDefaultCrf;
  bool features_enabled = false;
  ViewMode view = ViewMode::Intensity;
  double playback_speed = 1.0;
  std::string source_path;
  std::vector<MetricPoint> metric_history;
  std::vector<RatePoint> rate_history;
  std::vector<PixelCoord> features;
};

// ---------------------------------------------------------------------------
// Pure transition function
// ---------------------------------------------------------------------------

struct OpenSourceEffect {
  std::string path;
  bool playback = false;
};
struct ApplyParamsEffect {
  ParamSet params;
};
struct ExportEffect {
  std::string path;
};
using Effect = std::variant<OpenSourceEffect, ApplyParamsEffect, ExportEffect>;

struct Transition {
  SessionState state;
  std::vector<json> outbound;
  std::vector<Effect> effects;
};

inline json params_json(const ParamSet& p) {
  return json{{"mode", to_string(p.mode)}, {"m_threshold", p.m_threshold}, {"delta_t_max", p.delta_t_max}};
}

inline json session_update(const SessionState& s) {
  json j{{"type", "session_update"},
         {"protocol", kProtocolVersion},
         {"session_id", s.session_id},
         {"phase", to_string(s.phase)},
         {"params", params_json(s.params)},
         {"ref_interval", s.ref_interval},
         {"features_enabled", s.features_enabled},
         {"view", s.view == ViewMode::Intensity ? "intensity" : s.view == ViewMode::DComponent ? "d" : "dt"},
         {"speed", s.playback_speed},
         {"source", s.source_path}};
  j["crf"] = s.crf ? json(*s.crf) : json("custom");
  return j;
}

inline json error_message(const SessionState& s, const std::string& message) {
  return json{{"type", "error"}, {"message", message}, {"phase", to_string(s.phase)}};
}

namespace detail {

inline bool has_session(const SessionState& s) {
  return s.phase == Phase::Transcoding || s.phase == Phase::Playing || s.phase == Phase::Paused;
}

inline std::string not_allowed(const std::string& type, const SessionState& s) {
  return type + " not allowed in phase " + to_string(s.phase);
}

template <class T>
std::optional<T> field(const json& msg, const char* key) {
  const auto it = msg.find(key);
  if (it == msg.end()) return std::nullopt;
  if constexpr (std::is_same_v<T, std::string>) {
    if (!it->is_string()) throw std::invalid_argument(std::string("field '") + key + "' must be a string");
  } else if constexpr (std::is_same_v<T, bool>) {
    if (!it->is_boolean()) throw std::invalid_argument(std::string("field '") + key + "' must be a boolean");
  } else if constexpr (std::is_integral_v<T>) {
    if (!it->is_number_integer()) throw std::invalid_argument(std::string("field '") + key + "' must be an integer");
  } else {
    if (!it->is_number()) throw std::invalid_argument(std::string("field '") + key + "' must be a number");
  }
  return it->get<T>();
}

template <class T>
T required(const json& msg, const char* key) {
  auto v = field<T>(msg, key);
  if (!v) throw std::invalid_argument(std::string("missing field '") + key + "'");
  return *v;
}

}  // namespace detail

/// Pure state transition. Every message yields exactly one acknowledgement:
/// a session_update, or an error with the state unchanged.
inline Transition handle_message(const SessionState& state, const json& msg) {
  Transition tr{state, {}, {}};
  auto fail = [&](const std::string& why) {
    tr.state = state;
    tr.effects.clear();
    tr.outbound = {error_message(state, why)};
    return tr;
  };
  if (!msg.is_object()) return fail("message must be a JSON object");
  const auto type_it = msg.find("type");
  if (type_it == msg.end() || !type_it->is_string()) return fail("message has no string 'type'");
  const std::string type = *type_it;
  SessionState& s = tr.state;

  try {
    if (type == "open_source") {
      const auto path = detail::required<std::string>(msg, "path");
      const bool playback = detail::field<bool>(msg, "playback").value_or(false);
      if (path.empty()) return fail("field 'path' must not be empty");
      if (detail::has_session(state)) return fail("busy");
      s.session_id = state.session_id + 1;
      s.phase = playback ? Phase::Playing : Phase::Transcoding;
      s.activity = playback ? Activity::Playback : Activity::Transcode;
      s.source_path = path;
      s.metric_history.clear();
      s.rate_history.clear();
      s.features.clear();
      tr.effects.push_back(OpenSourceEffect{path, playback});
    } else if (type == "set_crf") {
      const auto crf = detail::required<int>(msg, "crf");
      if (crf < 0 || crf > 9) return fail("crf must be in 0..9");
      if (state.phase == Phase::Playing || (state.phase == Phase::Paused && state.activity == Activity::Playback))
        return fail(detail::not_allowed(type, state));
      ParamSet p = params_from_crf(crf, state.ref_interval);
      p.feature_boost = state.params.feature_boost;
      s.params = p;
      s.crf = crf;
      tr.effects.push_back(ApplyParamsEffect{p});
    } else if (type == "set_params") {
      const auto mode = detail::field<std::string>(msg, "mode");
      const auto m = detail::field<int>(msg, "m_threshold");
      const auto dtmax = detail::field<std::int64_t>(msg, "delta_t_max");
      if (!mode && !m && !dtmax) return fail("set_params needs mode, m_threshold or delta_t_max");
      if (state.phase == Phase::Playing || (state.phase == Phase::Paused && state.activity == Activity::Playback))
        return fail(detail::not_allowed(type, state));
      ParamSet p = state.params;
      if (mode) {
        if (*mode == "collapse")
          p.mode = PixelMode::Collapse;
        else if (*mode == "multinode")
          p.mode = PixelMode::MultiNode;
        else
          return fail("mode must be 'collapse' or 'multinode'");
      }
      if (m) p.m_threshold = *m;
      if (dtmax) {
        if (*dtmax < 1 || *dtmax > std::numeric_limits<Tick>::max()) return fail("delta_t_max out of range");
        p.delta_t_max = static_cast<Tick>(*dtmax);
      }
      if (auto err = validate(p, state.ref_interval); !err.empty()) return fail(err);
      s.params = p;
      s.crf.reset();
      tr.effects.push_back(ApplyParamsEffect{p});
    } else if (type == "play") {
      if (state.phase == Phase::Idle) return fail("no active session");
      if (!detail::has_session(state)) return fail(detail::not_allowed(type, state));
      if (state.phase == Phase::Paused)
        s.phase = state.activity == Activity::Playback ? Phase::Playing : Phase::Transcoding;
    } else if (type == "pause") {
      if (state.phase == Phase::Idle) return fail("no active session");
      if (!detail::has_session(state)) return fail(detail::not_allowed(type, state));
      s.phase = Phase::Paused;
    } else if (type == "set_speed") {
      const auto speed = detail::required<double>(msg, "speed");
      if (!(speed > 0.0) || speed > 64.0) return fail("speed must be in (0, 64]");
      if (state.phase == Phase::Idle) return fail("no active session");
      if (!detail::has_session(state)) return fail(detail::not_allowed(type, state));
      s.playback_speed = speed;
    } else if (type == "set_view") {
      const auto view = detail::required<std::string>(msg, "view");
      const auto v = parse_view_mode(view);
      if (!v) return fail("view must be 'intensity', 'd' or 'dt'");
      s.view = *v;
    } else if (type == "toggle_features") {
      const bool enabled = detail::field<bool>(msg, "enabled").value_or(!state.features_enabled);
      s.features_enabled = enabled;
      s.params.feature_boost =
          enabled ? std::optional<FeatureBoost>(default_feature_boost(state.ref_interval)) : std::nullopt;
      if (!enabled) s.features.clear();
      tr.effects.push_back(ApplyParamsEffect{s.params});
    } else if (type == "export") {
      const auto path = detail::required<std::string>(msg, "path");
      if (path.empty()) return fail("field 'path' must not be empty");
      if (state.phase == Phase::Idle) return fail("no active session");
      if (state.activity != Activity::Transcode || state.phase == Phase::Error) return fail(detail::not_allowed(type, state));
      tr.effects.push_back(ExportEffect{path});
    } else {
      return fail("unknown message type '" + type + "'");
    }
  } catch (const std::invalid_argument& e) {
    return fail(e.what());
  } catch (const json::exception& e) {
    return fail(e.what());
  }
  tr.outbound.push_back(session_update(s));
  return tr;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Source bitrate of the uncompressed frames and event bitrate of one
/// reference interval.
inline RatePoint rate_point(const StreamMeta& meta, std::uint64_t interval_events, Tick tick) {
  const double interval_s = static_cast<double>(meta.ref_interval) / meta.ticks_per_second;
  const double fps = 1.0 / interval_s;
  RatePoint r;
  r.tick = tick;
  if (meta.source_kind != SourceKind::Dvs)
    r.source_bits_per_sec = static_cast<double>(meta.width) * meta.height * meta.channels * 8.0 * fps;
  r.event_bits_per_sec = static_cast<double>(record_size(meta)) * 8.0 * static_cast<double>(interval_events) / interval_s;
  return r;
}

/// Metrics need a reference frame; without one only the rate point exists.
inline std::pair<std::optional<MetricPoint>, RatePoint> publish_metrics(const Image* reference,
                                                                        const Image& reconstructed,
                                                                        std::uint64_t interval_events,
                                                                        const StreamMeta& meta, Tick tick) {
  std::optional<MetricPoint> mp;
  if (reference && meta.source_kind == SourceKind::Framed) {
    const auto m = frame_metrics(*reference, reconstructed);
    mp = MetricPoint{tick, m.mse, m.psnr_db, m.ssim};
  }
  return {mp, rate_point(meta, interval_events, tick)};
}

inline json to_json(const MetricPoint& m) {
  json j{{"type", "metrics_point"}, {"tick", m.tick}, {"mse", m.mse}, {"ssim", m.ssim}};
  if (std::isinf(m.psnr_db)) {
    j["psnr"] = nullptr;
    j["psnr_infinite"] = true;
  } else {
    j["psnr"] = m.psnr_db;
    j["psnr_infinite"] = false;
  }
  return j;
}

inline json to_json(const RatePoint& r) {
  return json{{"type", "rate_point"},
              {"tick", r.tick},
              {"source_bits_per_sec", r.source_bits_per_sec},
              {"event_bits_per_sec", r.event_bits_per_sec}};
}

inline std::string base64_encode(const std::uint8_t* data, std::size_t n) {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((n + 2) / 3 * 4);
  for (std::size_t i = 0; i < n; i += 3) {
    const std::uint32_t b = (std::uint32_t{data[i]} << 16) | (i + 1 < n ? std::uint32_t{data[i + 1]} << 8 : 0) |
                            (i + 2 < n ? std::uint32_t{data[i + 2]} : 0);
    out += kAlphabet[(b >> 18) & 63];
    out += kAlphabet[(b >> 12) & 63];
    out += i + 1 < n ? kAlphabet[(b >> 6) & 63] : '=';
    out += i + 2 < n ? kAlphabet[b & 63] : '=';
  }
  return out;
}

/// Planar (one plane per channel) base64 of an interleaved image.
inline std::string planar_base64(const Image& img) {
  const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
  std::vector<std::uint8_t> planar(img.data.size());
  for (std::size_t p = 0; p < plane; ++p)
    for (int c = 0; c < img.channels; ++c) planar[c * plane + p] = img.data[p * img.channels + c];
  return base64_encode(planar.data(), planar.size());
}

// ---------------------------------------------------------------------------
// Session
// ---------------------------------------------------------------------------

struct SessionOptions {
  /// Accurate reconstruction buffer for the transcoded preview.
  std::size_t buffer_cap = 4;
  double max_preview_rate = 30.0;
  /// Seconds, monotonic. Defaults to steady_clock.
  std::function<double()> clock;
  unsigned workers = 0;
  double framed_fps = 30.0;
};

/// Runs one session's transcode or playback. Not thread-safe; SessionRunner
/// serializes access.
class Session {
 public:
  explicit Session(SessionOptions opt = {}) : opt_(std::move(opt)) {
    if (!opt_.clock)
      opt_.clock = [] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
      };
  }

  const SessionState& state() const noexcept { return state_; }
  const StreamMeta& meta() const noexcept { return meta_; }
  /// Every event emitted by the current (or last) transcode.
  const std::vector<Event>& events() const noexcept { return events_; }
  bool runnable() const noexcept { return state_.phase == Phase::Transcoding || state_.phase == Phase::Playing; }

  /// Wall-clock seconds one step should take at the current speed
  /// (playback only; transcodes run flat out).
  double step_period() const noexcept {
    if (state_.phase != Phase::Playing || !play_) return 0.0;
    return static_cast<double>(play_interval_) / meta_.ticks_per_second / state_.playback_speed;
  }

  std::vector<json> handle(const json& msg) {
    auto tr = handle_message(state_, msg);
    std::vector<json> out;
    const SessionState before = state_;
    state_ = std::move(tr.state);
    for (const auto& eff : tr.effects) {
      try {
        std::visit([&](const auto& e) { apply(e, out); }, eff);
      } catch (const std::exception& e) {
        if (std::holds_alternative<ExportEffect>(eff)) {
          state_ = before;
          return {error_message(state_, std::string("export failed: ") + e.what())};
        }
        fail(e.what(), out);
        return out;
      }
    }
    out.insert(out.begin(), tr.outbound.begin(), tr.outbound.end());
    return out;
  }

  /// One unit of work: a reference interval of transcode or one output
  /// frame of playback.
  std::vector<json> step() {
    std::vector<json> out;
    if (!runnable()) return out;
    try {
      if (state_.phase == Phase::Transcoding)
        step_transcode(out);
      else
        step_playback(out);
    } catch (const std::exception& e) {
      fail(e.what(), out);
    }
    return out;
  }

 private:
  struct TranscodeRun {
    AnySource source;
    DvsHeader dvs_header;
    std::optional<DvsEvent> lookahead;
    bool source_done = false;
    std::unique_ptr<Transcoder> tx;
    std::unique_ptr<AccurateReconstructor> recon;
    std::unique_ptr<ComponentView> view;
    std::deque<Image> references;  // source frames awaiting their reconstruction
    std::uint64_t recon_index = 0;
    Tick now = 0;
  };

  struct PlayRun {
    std::unique_ptr<std::ifstream> file;
    std::unique_ptr<StreamReader> reader;
    std::unique_ptr<ComponentView> view;
    std::optional<Event> lookahead;
    std::uint64_t next_boundary = 0;
    std::uint64_t max_t = 0;
    bool eof = false;
    std::uint64_t frames = 0;
  };

  void apply(const OpenSourceEffect& e, std::vector<json>& out) {
    tx_.reset();
    play_.reset();
    events_.clear();
    last_preview_ = -std::numeric_limits<double>::infinity();
    if (e.playback)
      open_playback(e.path);
    else
      open_transcode(e.path);
    (void)out;
  }

  void apply(const ApplyParamsEffect& e, std::vector<json>&) {
    if (tx_ && tx_->tx) tx_->tx->set_params(e.params);
  }

  void apply(const ExportEffect& e, std::vector<json>& out) {
    std::ofstream os(e.path, std::ios::binary | std::ios::trunc);
    if (!os) throw SinkError("cannot open " + e.path);
    StreamMeta m = meta_;
    m.delta_t_max = std::max(m.delta_t_max, max_dtmax_);
    StreamWriter w(os, m);
    w.write(events_);
    w.flush();
    out.push_back(json{{"type", "exported"}, {"path", e.path}, {"events", w.events_written()}, {"bytes", w.bytes_written()}});
  }

  void open_transcode(const std::string& path) {
    auto run = std::make_unique<TranscodeRun>();
    run->source = open_source(path, opt_.framed_fps);
    const int crf = state_.crf.value_or(kDefaultCrf);
    if (auto* framed = std::get_if<std::unique_ptr<FrameSource>>(&run->source)) {
      meta_ = framed_meta(**framed, state_.params, crf, state_.ref_interval);
    } else {
      auto& dvs = *std::get<std::unique_ptr<DvsSource>>(run->source);
      run->dvs_header = dvs.header();
      meta_ = dvs_meta(dvs, state_.params, crf, state_.ref_interval);
    }
    max_dtmax_ = state_.params.delta_t_max;
    run->tx = std::make_unique<Transcoder>(meta_, state_.params, opt_.workers);
    run->recon = std::make_unique<AccurateReconstructor>(meta_, meta_.ref_interval, opt_.buffer_cap);
    run->view = std::make_unique<ComponentView>(meta_);
    tx_ = std::move(run);
  }

  void open_playback(const std::string& path) {
    auto run = std::make_unique<PlayRun>();
    run->file = std::make_unique<std::ifstream>(path, std::ios::binary);
    if (!*run->file) throw FormatError("cannot open " + path);
    run->reader = std::make_unique<StreamReader>(*run->file);
    meta_ = run->reader->meta();
    play_interval_ = frame_interval_for(meta_, native_fps(meta_));
    run->next_boundary = play_interval_;
    run->view = std::make_unique<ComponentView>(meta_);
    play_ = std::move(run);
  }

  void fail(const std::string& why, std::vector<json>& out) {
    state_.phase = Phase::Error;
    tx_.reset();
    play_.reset();
    out.push_back(error_message(state_, why));
    out.push_back(session_update(state_));
  }

  void finish_session(std::vector<json>& out, std::uint64_t frames) {
    state_.phase = Phase::Done;
    out.push_back(json{{"type", "done"}, {"events", events_.size()}, {"frames", frames}});
    out.push_back(session_update(state_));
  }

  bool preview_due() {
    const double now = opt_.clock();
    if (opt_.max_preview_rate > 0 && now - last_preview_ < 1.0 / opt_.max_preview_rate) return false;
    last_preview_ = now;
    return true;
  }

  void emit_preview(std::vector<json>& out, Tick tick, const Image& transcoded, const Image* source) {
    if (!preview_due()) return;
    json j{{"type", "preview_frame"},
           {"seq", ++preview_seq_},
           {"tick", tick},
           {"width", transcoded.width},
           {"height", transcoded.height},
           {"channels", transcoded.channels},
           {"layout", "planar"},
           {"transcoded", planar_base64(transcoded)}};
    j["source"] = source ? json(planar_base64(*source)) : json(nullptr);
    out.push_back(std::move(j));
  }

  void step_transcode(std::vector<json>& out) {
    auto& run = *tx_;
    if (state_.params.delta_t_max > max_dtmax_) max_dtmax_ = state_.params.delta_t_max;
    std::vector<Event> interval;
    auto take = [&](std::span<const Event> ev) { interval.insert(interval.end(), ev.begin(), ev.end()); };
    bool finished = false;
    const Tick interval_start = run.now;

    if (auto* framed = std::get_if<std::unique_ptr<FrameSource>>(&run.source)) {
      std::optional<Image> frame = (*framed)->next();
      if (frame) {
        take(run.tx->push_frame(*frame));
        run.references.push_back(std::move(*frame));
        run.now += meta_.ref_interval;
      } else {
        take(run.tx->finish());
        finished = true;
      }
    } else {
      auto& dvs = *std::get<std::unique_ptr<DvsSource>>(run.source);
      const Tick boundary = run.now + meta_.ref_interval;
      for (;;) {
        if (!run.lookahead && !run.source_done) {
          run.lookahead = dvs.next();
          if (!run.lookahead) run.source_done = true;
        }
        if (!run.lookahead || run.lookahead->t >= boundary) break;
        take(run.tx->push_dvs(*run.lookahead, run.dvs_header.c_threshold));
        run.lookahead.reset();
      }
      if (run.source_done && !run.lookahead) {
        take(run.tx->finish());
        finished = true;
      } else {
        take(run.tx->advance_dvs_to(boundary));
        run.now = boundary;
      }
    }

    events_.insert(events_.end(), interval.begin(), interval.end());
    for (const auto& e : interval) run.view->apply(e);

    std::vector<Image> recon;
    for (const auto& e : interval) run.recon->push(e, recon);
    if (finished) run.recon->finish(recon);

    const Tick tick = finished ? run.now : interval_start;
    if (!finished || !interval.empty()) {
      const auto rp = rate_point(meta_, interval.size(), tick);
      state_.rate_history.push_back(rp);
      out.push_back(to_json(rp));
    }
    for (auto& img : recon) {
      const Tick frame_tick = static_cast<Tick>(run.recon_index * meta_.ref_interval);
      const Image* ref = run.references.empty() ? nullptr : &run.references.front();
      if (ref) {
        const auto m = frame_metrics(*ref, img);
        const MetricPoint mp{frame_tick, m.mse, m.psnr_db, m.ssim};
        state_.metric_history.push_back(mp);
        out.push_back(to_json(mp));
      }
      const Image shown = state_.view == ViewMode::Intensity ? img : run.view->render(state_.view);
      emit_preview(out, frame_tick, shown, ref);
      if (!run.references.empty()) run.references.pop_front();
      ++run.recon_index;
    }

    if (state_.features_enabled && !finished) {
      const auto coords = make_fast_feedback()(run.tx->canvas(), interval);
      if (!coords.empty()) run.tx->boost_features(coords);
      state_.features = coords;
      json pts = json::array();
      for (const auto& c : coords) pts.push_back({c.x, c.y});
      out.push_back(json{{"type", "features"}, {"tick", tick}, {"points", std::move(pts)}});
    }
    if (finished) finish_session(out, run.recon_index);
  }

  void step_playback(std::vector<json>& out) {
    auto& run = *play_;
    for (;;) {
      if (!run.lookahead) {
        if (run.eof) break;
        run.lookahead = run.reader->next();
        if (!run.lookahead) {
          run.eof = true;
          break;
        }
        run.max_t = std::max<std::uint64_t>(run.max_t, run.lookahead->t);
      }
      if (run.lookahead->t > run.next_boundary) break;
      run.view->apply(*run.lookahead);
      run.lookahead.reset();
    }
    if (!run.lookahead && run.next_boundary > run.max_t) {
      finish_session(out, run.frames);
      return;
    }
    emit_preview(out, static_cast<Tick>(run.next_boundary), run.view->render(state_.view), nullptr);
    ++run.frames;
    run.next_boundary += play_interval_;
  }

  SessionOptions opt_;
  SessionState state_;
  StreamMeta meta_;
  std::unique_ptr<TranscodeRun> tx_;
  std::unique_ptr<PlayRun> play_;
  std::vector<Event> events_;
  Tick max_dtmax_ = 0;
  Tick play_interval_ = 1;
  std::uint64_t preview_seq_ = 0;
  double last_preview_ = -std::numeric_limits<double>::infinity();
};

// ---------------------------------------------------------------------------
// Runner: worker thread plus ordered command and event queues
// ---------------------------------------------------------------------------

class SessionRunner {
 public:
  using Sink = std::function<void(const json&)>;

  SessionRunner(SessionOptions opt, Sink sink) : session_(std::move(opt)), sink_(std::move(sink)) {
    worker_ = std::jthread([this](std::stop_token st) { loop(st); });
  }
  ~SessionRunner() {
    worker_.request_stop();
    cv_.notify_all();
  }
  SessionRunner(const SessionRunner&) = delete;
  SessionRunner& operator=(const SessionRunner&) = delete;

  void submit(json msg) {
    {
      std::lock_guard lock(mu_);
      commands_.push_back(std::move(msg));
    }
    cv_.notify_all();
  }

  /// Snapshot of the session state, taken between steps.
  SessionState state() const {
    std::lock_guard lock(state_mu_);
    return snapshot_;
  }

 private:
  void loop(std::stop_token st) {
    using clock = std::chrono::steady_clock;
    auto next_step = clock::now();
    while (!st.stop_requested()) {
      std::deque<json> batch;
      {
        std::unique_lock lock(mu_);
        const bool runnable = session_.runnable();
        const auto wake = [&] { return st.stop_requested() || !commands_.empty(); };
        if (!runnable)
          cv_.wait(lock, wake);
        else if (clock::now() < next_step)
          cv_.wait_until(lock, next_step, wake);
        batch.swap(commands_);
      }
      if (st.stop_requested()) break;
      for (const auto& msg : batch) publish(session_.handle(msg));
      if (session_.runnable() && clock::now() >= next_step) {
        publish(session_.step());
        const auto period = std::chrono::duration<double>(session_.step_period());
        next_step = clock::now() + std::chrono::duration_cast<clock::duration>(period);
      }
    }
  }

  void publish(const std::vector<json>& msgs) {
    {
      std::lock_guard lock(state_mu_);
      snapshot_ = session_.state();
    }
    for (const auto& m : msgs) sink_(m);
  }

  Session session_;
  Sink sink_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<json> commands_;
  mutable std::mutex state_mu_;
  SessionState snapshot_;
  std::jthread worker_;
};

}  // namespace evtsuite::service
