#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "evtsuite/session.hpp"
#include "evtsuite/wire.hpp"
#include "protocol_model.hpp"
#include "test_support.hpp"

using namespace evtsuite;
using namespace evtsuite::service;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            (std::string("evtsuite_session_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

fs::path write_clip(const fs::path& dir, const std::vector<Image>& clip) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < clip.size(); ++i) write_pnm(dir / ("f" + std::to_string(100 + i) + ".pgm"), clip[i]);
  return dir;
}

SessionOptions unthrottled() {
  SessionOptions o;
  o.max_preview_rate = 0;
  o.workers = 1;
  return o;
}

std::vector<json> run_to_end(Session& s, int limit = 10000) {
  std::vector<json> all;
  while (s.runnable() && limit-- > 0) {
    auto out = s.step();
    all.insert(all.end(), out.begin(), out.end());
  }
  return all;
}

std::vector<json> of_type(const std::vector<json>& msgs, const std::string& type) {
  std::vector<json> out;
  for (const auto& m : msgs)
    if (m["type"] == type) out.push_back(m);
  return out;
}

}  // namespace

TEST(Protocol, OpenSourceFromIdleStartsTranscoding) {
  const auto tr = handle_message(SessionState{}, json{{"type", "open_source"}, {"path", "/clip"}});
  EXPECT_EQ(tr.state.phase, Phase::Transcoding);
  EXPECT_EQ(tr.state.session_id, 1u);
  ASSERT_EQ(tr.outbound.size(), 1u);
  EXPECT_EQ(tr.outbound[0]["type"], "session_update");
  EXPECT_EQ(tr.outbound[0]["phase"], "Transcoding");
  ASSERT_EQ(tr.effects.size(), 1u);
  EXPECT_TRUE(std::holds_alternative<OpenSourceEffect>(tr.effects[0]));
}

TEST(Protocol, SetCrfReportsDerivedParameters) {
  SessionState s;
  s.phase = Phase::Transcoding;
  s.activity = Activity::Transcode;
  const auto tr = handle_message(s, json{{"type", "set_crf"}, {"crf", 9}});
  const auto& u = tr.outbound.at(0);
  EXPECT_EQ(u["crf"], 9);
  EXPECT_EQ(u["params"]["m_threshold"], 40);
  EXPECT_EQ(u["params"]["delta_t_max"], 120 * 255);
  EXPECT_EQ(u["params"]["mode"], "collapse");
  const auto tr0 = handle_message(s, json{{"type", "set_crf"}, {"crf", 0}});
  EXPECT_EQ(tr0.outbound.at(0)["params"]["mode"], "multinode");
}

TEST(Protocol, SetParamsMarksCrfCustom) {
  const auto tr = handle_message(SessionState{}, json{{"type", "set_params"}, {"m_threshold", 7}});
  EXPECT_EQ(tr.outbound.at(0)["crf"], "custom");
  EXPECT_EQ(tr.state.params.m_threshold, 7);
  EXPECT_FALSE(tr.state.crf.has_value());
}

TEST(Protocol, IllegalTransitionsNameThePhase) {
  auto tr = handle_message(SessionState{}, json{{"type", "set_speed"}, {"speed", 2.0}});
  EXPECT_EQ(tr.outbound.at(0)["type"], "error");
  EXPECT_EQ(tr.outbound.at(0)["message"], "no active session");
  SessionState busy;
  busy.phase = Phase::Transcoding;
  busy.activity = Activity::Transcode;
  tr = handle_message(busy, json{{"type", "open_source"}, {"path", "x"}});
  EXPECT_EQ(tr.outbound.at(0)["message"], "busy");
  EXPECT_EQ(tr.state.phase, Phase::Transcoding);
  SessionState done;
  done.phase = Phase::Done;
  tr = handle_message(done, json{{"type", "pause"}});
  EXPECT_EQ(tr.outbound.at(0)["message"], "pause not allowed in phase Done");
}

TEST(Protocol, SchemaViolationsLeaveStateUnchanged) {
  SessionState s;
  s.phase = Phase::Transcoding;
  s.activity = Activity::Transcode;
  for (const auto& bad : {json(42), json{{"kind", "x"}}, json{{"type", "nope"}}, json{{"type", "set_crf"}},
                          json{{"type", "set_crf"}, {"crf", "3"}}, json{{"type", "set_crf"}, {"crf", 10}},
                          json{{"type", "set_params"}}, json{{"type", "set_params"}, {"mode", "both"}},
                          json{{"type", "set_params"}, {"delta_t_max", 3}}, json{{"type", "set_speed"}, {"speed", -1}},
                          json{{"type", "set_view"}, {"view", "x"}}, json{{"type", "export"}}}) {
    const auto tr = handle_message(s, bad);
    ASSERT_EQ(tr.outbound.size(), 1u) << bad;
    EXPECT_EQ(tr.outbound[0]["type"], "error") << bad;
    EXPECT_EQ(tr.state.phase, s.phase);
    EXPECT_EQ(tr.state.params, s.params);
    EXPECT_TRUE(tr.effects.empty());
  }
}

TEST(Metrics, RatePointExamples) {
  StreamMeta m;
  m.width = 8;
  m.height = 8;
  m.channels = 1;
  m.ref_interval = 255;
  m.ticks_per_second = 255 * 30;
  EXPECT_DOUBLE_EQ(rate_point(m, 0, 0).source_bits_per_sec, 15360.0);
  m.ticks_per_second = 255;  // one-second interval
  EXPECT_DOUBLE_EQ(rate_point(m, 64, 0).event_bits_per_sec, 4608.0);
  Image a(8, 8, 1);
  const auto [mp, rp] = publish_metrics(&a, a, 64, m, 0);
  ASSERT_TRUE(mp.has_value());
  EXPECT_EQ(mp->mse, 0.0);
  EXPECT_TRUE(std::isinf(mp->psnr_db));
  EXPECT_EQ(to_json(*mp)["psnr_infinite"], true);
  m.source_kind = SourceKind::Dvs;
  EXPECT_FALSE(publish_metrics(&a, a, 64, m, 0).first.has_value());
}

TEST(Base64, KnownVectors) {
  const std::string s = "foobar";
  const auto* p = reinterpret_cast<const std::uint8_t*>(s.data());
  EXPECT_EQ(base64_encode(p, 0), "");
  EXPECT_EQ(base64_encode(p, 1), "Zg==");
  EXPECT_EQ(base64_encode(p, 2), "Zm8=");
  EXPECT_EQ(base64_encode(p, 6), "Zm9vYmFy");
  Image img(1, 1, 3);
  img.data = {1, 2, 3};
  EXPECT_EQ(planar_base64(img), base64_encode(img.data.data(), 3));
}

TEST(Wire, FramesRoundTripAcrossSplits) {
  const json a{{"type", "play"}}, b{{"type", "set_crf"}, {"crf", 3}};
  const std::string bytes = wire::encode_frame(a) + wire::encode_frame(b);
  EXPECT_EQ(bytes.substr(0, 4), std::string("\x0f\x00\x00\x00", 4));
  wire::FrameDecoder d;
  std::vector<json> got;
  for (char c : bytes) {
    d.feed(std::string_view(&c, 1));
    while (auto m = d.next()) got.push_back(*m);
  }
  ASSERT_EQ(got.size(), 2u);
  EXPECT_EQ(got[0], a);
  EXPECT_EQ(got[1], b);
  d.feed(std::string("\x03\x00\x00\x00{{{", 7));
  auto bad = d.next();
  ASSERT_TRUE(bad.has_value());
  EXPECT_TRUE(bad->is_discarded());
  d.feed(std::string("\xff\xff\xff\xff", 4));
  EXPECT_THROW(d.next(), FormatError);
}

TEST(Session, LosslessTranscodeReportsZeroMse) {
  TempDir tmp;
  const auto dir = write_clip(tmp.path() / "clip", oracle::constant_clip(8, 8, 4));
  Session s(unthrottled());
  s.handle(json{{"type", "set_crf"}, {"crf", 0}});
  auto out = s.handle(json{{"type", "open_source"}, {"path", dir.string()}});
  EXPECT_EQ(out.at(0)["phase"], "Transcoding");
  auto all = run_to_end(s);
  const auto metrics = of_type(all, "metrics_point");
  ASSERT_EQ(metrics.size(), 4u);
  for (const auto& m : metrics) {
    EXPECT_EQ(m["mse"], 0.0);
    EXPECT_EQ(m["psnr_infinite"], true);
  }
  const auto rates = of_type(all, "rate_point");
  ASSERT_GE(rates.size(), 4u);
  EXPECT_EQ(rates[0]["source_bits_per_sec"], 15360.0);
  const auto previews = of_type(all, "preview_frame");
  ASSERT_EQ(previews.size(), 4u);
  for (std::size_t i = 0; i < previews.size(); ++i) {
    EXPECT_EQ(previews[i]["seq"], i + 1);
    EXPECT_EQ(previews[i]["source"], previews[i]["transcoded"]);
  }
  EXPECT_EQ(of_type(all, "done").size(), 1u);
  EXPECT_EQ(s.state().phase, Phase::Done);
  EXPECT_EQ(s.state().metric_history.size(), 4u);
}

TEST(Session, PreviewIsThrottled) {
  TempDir tmp;
  const auto dir = write_clip(tmp.path() / "clip", oracle::noise_clip(8, 8, 12));
  SessionOptions opt = unthrottled();
  opt.max_preview_rate = 30.0;
  double now = 0.0;
  opt.clock = [&] { return now; };  // frozen clock: only the first preview passes
  Session s(opt);
  s.handle(json{{"type", "open_source"}, {"path", dir.string()}});
  const auto all = run_to_end(s);
  EXPECT_EQ(of_type(all, "preview_frame").size(), 1u);
  EXPECT_GE(of_type(all, "metrics_point").size(), 10u);
}

TEST(Session, MidStreamCrfChangeKeepsStreamValid) {
  TempDir tmp;
  const auto clip = oracle::moving_gradient_clip(16, 12, 12, 2);
  const auto dir = write_clip(tmp.path() / "clip", clip);
  Session s(unthrottled());
  s.handle(json{{"type", "set_crf"}, {"crf", 0}});
  s.handle(json{{"type", "open_source"}, {"path", dir.string()}});
  std::vector<json> rates;
  for (int i = 0; i < 4; ++i) s.step();
  auto ack = s.handle(json{{"type", "set_crf"}, {"crf", 9}});
  EXPECT_EQ(ack.at(0)["params"]["m_threshold"], 40);
  for (int i = 0; i < 3; ++i) s.step();
  s.handle(json{{"type", "set_params"}, {"mode", "multinode"}, {"m_threshold", 2}});
  run_to_end(s);
  ASSERT_EQ(s.state().phase, Phase::Done);
  EXPECT_TRUE(oracle::per_pixel_monotonic(s.meta(), s.events()));
  const auto path = tmp.path() / "out.aevs";
  const auto out = s.handle(json{{"type", "export"}, {"path", path.string()}});
  ASSERT_EQ(out.at(0)["type"], "session_update") << out.at(0);
  std::ifstream in(path, std::ios::binary);
  const auto decoded = read_stream(in);
  EXPECT_EQ(decoded.events, s.events());
  const auto frames = reconstruct_accurate(decoded.meta, decoded.events, 30);
  EXPECT_EQ(frames.size(), clip.size());
}

TEST(Session, StaticSceneRateDropsAfterCrfRaise) {
  TempDir tmp;
  auto clip = oracle::noise_clip(16, 16, 1, 1, 4);
  for (int i = 0; i < 15; ++i) {
    Image f = clip.front();
    for (auto& v : f.data) v = static_cast<std::uint8_t>(std::min(255, v + (i % 2) * 2));
    clip.push_back(f);
  }
  const auto dir = write_clip(tmp.path() / "clip", clip);
  Session s(unthrottled());
  s.handle(json{{"type", "set_crf"}, {"crf", 0}});
  s.handle(json{{"type", "open_source"}, {"path", dir.string()}});
  std::vector<double> before, after;
  for (int i = 0; i < 6; ++i)
    for (const auto& m : of_type(s.step(), "rate_point")) before.push_back(m["event_bits_per_sec"]);
  s.handle(json{{"type", "set_crf"}, {"crf", 9}});
  for (int i = 0; i < 6; ++i)
    for (const auto& m : of_type(s.step(), "rate_point")) after.push_back(m["event_bits_per_sec"]);
  const double mb = std::accumulate(before.begin() + 1, before.end(), 0.0) / (before.size() - 1);
  const double ma = std::accumulate(after.begin() + 1, after.end(), 0.0) / (after.size() - 1);
  EXPECT_LT(ma, mb);
}

TEST(Session, PauseAndResumePlaybackReproducesFrames) {
  TempDir tmp;
  const auto clip = oracle::moving_gradient_clip(10, 6, 8);
  const auto t = oracle::transcode_clip(clip, params_from_crf(2, 255), 2);
  const auto path = tmp.path() / "s.aevs";
  std::ofstream(path, std::ios::binary) << oracle::encode(t.meta, t.events);

  auto previews = [&](bool pause) {
    Session s(unthrottled());
    s.handle(json{{"type", "open_source"}, {"path", path.string()}, {"playback", true}});
    std::vector<json> frames;
    int steps = 0;
    while (s.state().phase != Phase::Done) {
      if (pause && steps == 3) {
        EXPECT_EQ(s.handle(json{{"type", "pause"}}).at(0)["phase"], "Paused");
        EXPECT_TRUE(s.step().empty());
        EXPECT_EQ(s.handle(json{{"type", "set_speed"}, {"speed", 4.0}}).at(0)["speed"], 4.0);
        EXPECT_EQ(s.handle(json{{"type", "play"}}).at(0)["phase"], "Playing");
      }
      for (auto& m : of_type(s.step(), "preview_frame")) frames.push_back(m["transcoded"]);
      ++steps;
      if (steps > 1000) break;
    }
    return frames;
  };
  const auto plain = previews(false);
  const auto paused = previews(true);
  EXPECT_EQ(plain.size(), clip.size());
  EXPECT_EQ(plain, paused);
}

TEST(Session, PlaybackViewsAndExportRules) {
  TempDir tmp;
  const auto t = oracle::transcode_clip(oracle::noise_clip(6, 6, 3), params_from_crf(3, 255), 3);
  const auto path = tmp.path() / "s.aevs";
  std::ofstream(path, std::ios::binary) << oracle::encode(t.meta, t.events);
  Session s(unthrottled());
  s.handle(json{{"type", "set_view"}, {"view", "dt"}});
  s.handle(json{{"type", "open_source"}, {"path", path.string()}, {"playback", true}});
  const auto out = s.handle(json{{"type", "export"}, {"path", (tmp.path() / "x.aevs").string()}});
  EXPECT_EQ(out.at(0)["type"], "error");
  EXPECT_EQ(s.handle(json{{"type", "set_crf"}, {"crf", 2}}).at(0)["type"], "error");
  const auto all = run_to_end(s);
  EXPECT_EQ(of_type(all, "preview_frame").size(), 3u);
  EXPECT_TRUE(of_type(all, "metrics_point").empty());
}

TEST(Session, BadSourceMovesToError) {
  TempDir tmp;
  Session s(unthrottled());
  const auto out = s.handle(json{{"type", "open_source"}, {"path", (tmp.path() / "missing").string()}});
  ASSERT_FALSE(out.empty());
  EXPECT_EQ(out.front()["type"], "error");
  EXPECT_EQ(s.state().phase, Phase::Error);
  // Recoverable: a new source may be opened.
  const auto dir = write_clip(tmp.path() / "clip", oracle::noise_clip(4, 4, 2));
  EXPECT_EQ(s.handle(json{{"type", "open_source"}, {"path", dir.string()}}).at(0)["phase"], "Transcoding");
}

TEST(Session, DvsSourceEmitsRatesOnly) {
  TempDir tmp;
  const auto path = tmp.path() / "d.txt";
  std::ofstream(path) << "DVS 4 4 7650 0.2231\n10 1 1 1\n300 2 2 -1\n700 1 1 1\n1000 3 3 1\n";
  Session s(unthrottled());
  s.handle(json{{"type", "open_source"}, {"path", path.string()}});
  const auto all = run_to_end(s);
  EXPECT_TRUE(of_type(all, "metrics_point").empty());
  const auto rates = of_type(all, "rate_point");
  ASSERT_FALSE(rates.empty());
  for (const auto& r : rates) EXPECT_EQ(r["source_bits_per_sec"], 0.0);
  EXPECT_EQ(s.state().phase, Phase::Done);
  EXPECT_TRUE(oracle::per_pixel_monotonic(s.meta(), s.events()));
  for (const auto& p : of_type(all, "preview_frame")) EXPECT_TRUE(p["source"].is_null());
}

TEST(Session, FeaturesPublishedWhenEnabled) {
  TempDir tmp;
  std::vector<Image> clip;
  for (int f = 0; f < 4; ++f) {
    Image img(16, 16, 1);
    for (auto& v : img.data) v = static_cast<std::uint8_t>(20 + 4 * (f % 2));
    for (int y = 6; y < 16; ++y)
      for (int x = 6; x < 16; ++x) img.at(x, y) = static_cast<std::uint8_t>(220 - 4 * (f % 2));
    clip.push_back(img);
  }
  const auto dir = write_clip(tmp.path() / "clip", clip);
  Session s(unthrottled());
  s.handle(json{{"type", "set_crf"}, {"crf", 0}});
  EXPECT_EQ(s.handle(json{{"type", "toggle_features"}}).at(0)["features_enabled"], true);
  s.handle(json{{"type", "open_source"}, {"path", dir.string()}});
  const auto all = run_to_end(s);
  bool corner = false;
  for (const auto& f : of_type(all, "features"))
    for (const auto& p : f["points"]) corner = corner || (p[0] == 6 && p[1] == 6);
  EXPECT_TRUE(corner);
  EXPECT_TRUE(oracle::per_pixel_monotonic(s.meta(), s.events()));
}

TEST(SessionRunner, ProcessesCommandsOnWorker) {
  TempDir tmp;
  const auto dir = write_clip(tmp.path() / "clip", oracle::noise_clip(8, 8, 5));
  std::mutex mu;
  std::condition_variable cv;
  std::vector<json> got;
  {
    SessionRunner r(unthrottled(), [&](const json& m) {
      std::lock_guard lock(mu);
      got.push_back(m);
      cv.notify_all();
    });
    r.submit(json{{"type", "open_source"}, {"path", dir.string()}});
    std::unique_lock lock(mu);
    ASSERT_TRUE(cv.wait_for(lock, std::chrono::seconds(20), [&] {
      for (const auto& m : got)
        if (m["type"] == "done") return true;
      return false;
    }));
  }
  EXPECT_EQ(got.front()["type"], "session_update");
  EXPECT_EQ(of_type(got, "preview_frame").size(), 5u);
}

TEST(ProtocolModel, PureHandlerAllSequencesUpToFive) {
  const auto r = oracle::check_pure_protocol(5);
  EXPECT_TRUE(r.violation.empty()) << r.violation;
  // 18 start states, each with 1 + 12 + ... + 12^5 sequences.
  EXPECT_EQ(r.sequences, 18u * (1u + 12u + 144u + 1728u + 20736u + 248832u));
  EXPECT_GT(r.distinct, 18u);
}

TEST(ProtocolModel, LiveSessionAllSequencesUpToThree) {
  TempDir tmp;
  const auto clip = oracle::noise_clip(4, 4, 3);
  const auto dir = write_clip(tmp.path() / "clip", clip);
  const auto t = oracle::transcode_clip(clip, params_from_crf(3, 255), 3);
  const auto stream = tmp.path() / "s.aevs";
  std::ofstream(stream, std::ios::binary) << oracle::encode(t.meta, t.events);
  const auto r = oracle::check_live_protocol(dir, stream, 3);
  EXPECT_TRUE(r.violation.empty()) << r.violation;
  EXPECT_EQ(r.sequences, 12u + 144u + 1728u);
}
