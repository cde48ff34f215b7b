// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

#include "evtsuite/cli.hpp"
#include "evtsuite/fast.hpp"
#include "evtsuite/reconstruct.hpp"
#include "evtsuite/stats.hpp"
#include "protocol_model.hpp"
#include "test_support.hpp"

using namespace evtsuite;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 3) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

Outcome codec_round_trip() {
  const auto t0 = Clock::now();
  std::mt19937 rng(20240601);
  for (int trial = 0; trial < 10000; ++trial) {
    StreamMeta m;
    m.width = static_cast<std::uint16_t>(1 + rng() % 640);
    m.height = static_cast<std::uint16_t>(1 + rng() % 480);
    m.channels = rng() % 2 ? 3 : 1;
    m.ref_interval = 1 + rng() % 5000;
    m.delta_t_max = m.ref_interval * (1 + rng() % 120);
    m.ticks_per_second = 1 + rng() % 10'000'000;
    m.crf = static_cast<std::uint8_t>(rng() % 10);
    m.source_kind = rng() % 2 ? SourceKind::Dvs : SourceKind::Framed;
    const int n = static_cast<int>(rng() % 64);
    std::vector<Event> events;
    std::vector<Tick> last(m.pixel_count() * m.channels, 0);
    Tick t = 0;
    for (int i = 0; i < n; ++i) {
      t += rng() % 3;
      const auto x = static_cast<std::uint16_t>(rng() % m.width);
      const auto y = static_cast<std::uint16_t>(rng() % m.height);
      const auto c = static_cast<std::uint8_t>(rng() % m.channels);
      auto& lt = last[(std::size_t{y} * m.width + x) * m.channels + c];
      const Tick et = std::max<Tick>(t, lt + 1);
      lt = et;
      const std::uint8_t d = rng() % 6 == 0 ? (rng() % 2 ? kDEmpty : kDZero) : static_cast<std::uint8_t>(rng() % (kMaxDecimation + 1));
      events.push_back(Event{x, y, c, d, et});
    }
    const auto bytes = oracle::encode(m, events);
    if (bytes.size() != kHeaderSize + record_size(m) * events.size())
      return {false, "case " + std::to_string(trial) + ": size " + std::to_string(bytes.size())};
    std::istringstream is(bytes);
    const auto decoded = read_stream(is);
    if (!(decoded.meta == m) || decoded.events != events) return {false, "case " + std::to_string(trial) + " differs"};
  }
  const double s = seconds_since(t0);
  return {s < 10.0, "10000 cases in " + fmt(s, 2) + " s (limit 10 s)"};
}

Outcome integration_oracle() {
  const auto t0 = Clock::now();
  std::mt19937 rng(4242);
  for (int trial = 0; trial < 200; ++trial) {
    const int frames = 1 + static_cast<int>(rng() % 16);
    auto clip = oracle::noise_clip(4, 4, frames, 1, rng());
    if (trial % 4 == 0)
      for (auto& f : clip) f = clip.front();
    ParamSet p;
    p.mode = PixelMode::MultiNode;
    p.m_threshold = static_cast<int>(rng() % 12);
    p.delta_t_max = 255 * (1 + rng() % 5);
    const auto t = oracle::transcode_clip(clip, p);
    if (!oracle::per_pixel_monotonic(t.meta, t.events)) return {false, "clip " + std::to_string(trial) + " not monotonic"};
    const auto err = oracle::check_multinode_runs(clip, p, 255, t.meta, t.events);
    if (!err.empty()) return {false, "clip " + std::to_string(trial) + ": " + err};
  }
  const double s = seconds_since(t0);
  return {s < 30.0, "200 clips in " + fmt(s, 2) + " s (limit 30 s)"};
}

Outcome worked_example() {
  PixelIntegrator in(255);
  PixelState s;
  s.run_active = true;
  s.run_start = 0;
  s.last_time = 519;
  s.d = 9;
  s.accumulated = 324 * 255 * kLevelScale;
  s.has_candidate = true;
  s.candidate_d = 8;
  s.candidate_t = 410;
  std::vector<Event> out;
  in.flush(s, PixelMode::Collapse, 519, {0, 0, 0}, out);
  const std::vector<Event> expected = {{0, 0, 0, 8, 410}, {0, 0, 0, kDEmpty, 519}};
  std::string got;
  for (const auto& e : out) got += "{" + std::to_string(e.d) + "," + std::to_string(e.t) + "}";
  return {out == expected, "flush -> " + got};
}

Outcome lossless_loop() {
  const auto clip = oracle::constant_clip(8, 8, 4);
  const auto t = oracle::transcode_clip(clip, params_from_crf(0, 255));
  const auto frames = reconstruct_accurate(t.meta, t.events, 30);
  if (frames != clip) return {false, "constant clip reconstruction differs"};
  double worst = 0.0, sum = 0.0;
  std::size_t n = 0;
  for (std::uint32_t seed : {5u, 6u, 7u}) {
    const auto varying = oracle::noise_clip(8, 8, 6, 1, seed);
    const auto tv = oracle::transcode_clip(varying, params_from_crf(0, 255));
    const auto fv = reconstruct_accurate(tv.meta, tv.events, 30);
    if (fv.size() != varying.size()) return {false, "varying clip frame count " + std::to_string(fv.size())};
    for (std::size_t f = 0; f < fv.size(); ++f)
      for (std::size_t i = 0; i < fv[f].data.size(); ++i) {
        const double d = std::abs(double{varying[f].data[i]} - fv[f].data[i]);
        worst = std::max(worst, d);
        sum += d;
        ++n;
      }
  }
  const double mean = sum / n;
  return {worst <= 1.0 && mean <= 0.5,
          "constant clip byte-identical; varying max " + fmt(worst, 0) + " mean " + fmt(mean, 4)};
}

Outcome crf_monotonicity() {
  const auto t0 = Clock::now();
  const auto clip = oracle::moving_gradient_clip(64, 64, 30, 1);
  std::uint64_t prev_events = UINT64_MAX;
  double prev_mse = -1.0;
  std::string table;
  bool ok = true;
  for (int crf = 0; crf <= 9; ++crf) {
    const auto t = oracle::transcode_clip(clip, params_from_crf(crf, 255), crf);
    const auto frames = reconstruct_accurate(t.meta, t.events, 30);
    if (frames.size() != clip.size()) return {false, "crf " + std::to_string(crf) + " frame count"};
    double mse_sum = 0.0;
    for (std::size_t f = 0; f < clip.size(); ++f) mse_sum += mse(clip[f], frames[f]);
    const double m = mse_sum / clip.size();
    const std::uint64_t n = t.events.size();
    ok = ok && n <= prev_events && m >= prev_mse;
    prev_events = n;
    prev_mse = m;
    table += " " + std::to_string(crf) + ":" + std::to_string(n) + "/" + fmt(m, 2);
  }
  const double s = seconds_since(t0);
  return {ok && s < 60.0, "crf:events/mse" + table + " in " + fmt(s, 1) + " s"};
}

Outcome collapse_throughput() {
  const auto clip = oracle::noise_clip(480, 270, 60, 1, 77);
  auto run = [&](PixelMode mode) {
    ParamSet p = params_from_crf(3, 255);
    p.mode = mode;
    std::vector<double> fps;
    for (int i = 0; i < 5; ++i) {
      const auto t0 = Clock::now();
      const auto t = oracle::transcode_clip(clip, p, 3, 1);
      fps.push_back(clip.size() / seconds_since(t0));
      if (t.report.frames_consumed != clip.size()) return -1.0;
    }
    std::sort(fps.begin(), fps.end());
    return fps[2];
  };
  const double collapse = run(PixelMode::Collapse);
  const double multinode = run(PixelMode::MultiNode);
  const double ratio = collapse / multinode;
  return {multinode > 0 && ratio >= 1.05, "median fps collapse " + fmt(collapse, 1) + " multinode " +
                                              fmt(multinode, 1) + " ratio " + fmt(ratio, 2) + " (need >= 1.05)"};
}

Image blocky_canvas(std::mt19937& rng, int w, int h) {
  Image img(w, h, 1);
  std::uniform_int_distribution<int> level(0, 255);
  for (int by = 0; by < h; by += 4)
    for (int bx = 0; bx < w; bx += 4) {
      const int v = level(rng);
      for (int y = by; y < std::min(h, by + 4); ++y)
        for (int x = bx; x < std::min(w, bx + 4); ++x)
          img.at(x, y) = static_cast<std::uint8_t>(std::clamp(v + static_cast<int>(rng() % 7) - 3, 0, 255));
    }
  return img;
}

Outcome fast_oracle() {
  std::mt19937 rng(31337);
  std::uint64_t checked = 0, disagreements = 0, corners = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const Image src = blocky_canvas(rng, 64, 64);
    // Paint the canvas from a transcoded event stream and test pixel by pixel.
    const auto t = oracle::transcode_clip({src, src}, params_from_crf(0, 255));
    IntensityCanvas canvas(t.meta);
    for (const auto& e : t.events) on_event_feature_check(canvas, e, kFastDefaultThreshold);
    const Image* painted = &canvas.levels();
    for (const Image* img : {&src, painted}) {
      const auto ref = oracle::reference_fast9(*img, kFastDefaultThreshold);
      for (int y = 3; y < 61; ++y)
        for (int x = 3; x < 61; ++x) {
          const bool want = ref[y * 64 + x];
          const bool got = img == &src ? fast_is_feature(*img, x, y, kFastDefaultThreshold)
                                       : fast_is_feature(canvas, x, y, kFastDefaultThreshold);
          disagreements += want != got;
          corners += want;
          ++checked;
        }
    }
  }
  return {disagreements == 0 && corners > 0, std::to_string(checked) + " interior pixels, " +
                                                 std::to_string(corners) + " corners, " +
                                                 std::to_string(disagreements) + " disagreements"};
}

Outcome stats_criterion() {
  StreamMeta m;
  m.width = 4;
  m.height = 1;
  m.ticks_per_second = 1000;
  m.ref_interval = 255;
  m.delta_t_max = 255 * 1000;
  std::string detail;
  bool ok = true;
  // Two D=0 events with spans 1 and r give an intensity ratio r.
  for (const auto& [span, bits] : std::vector<std::pair<Tick, double>>{{2, 1.0}, {8, 3.0}, {8361, 13.03}}) {
    const std::vector<Event> ev = {{0, 0, 0, 0, 1}, {1, 0, 0, 0, span}, {2, 0, 0, kDEmpty, 9000}};
    const auto s = compute_stats(m, ev);
    const double got = s.dynamic_range_bits.value_or(-1.0);
    ok = ok && std::abs(got - bits) <= 0.01;
    const double rate = 3.0 * 1000 / 9000;
    ok = ok && s.event_count == 3 && s.events_per_second == rate;
    detail += fmt(bits, 2) + "->" + fmt(got, 4) + " ";
  }
  return {ok, "dynamic range " + detail + "rate exact"};
}

Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / "evtsuite_acceptance_det";
  fs::remove_all(dir);
  fs::create_directories(dir / "clip");
  const auto clip = oracle::noise_clip(96, 64, 8, 1, 3);
  for (std::size_t i = 0; i < clip.size(); ++i)
    write_pnm(dir / "clip" / ("f" + std::to_string(100 + i) + ".pgm"), clip[i]);
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  bool ok = true;
  std::string detail;
  for (const char* crf : {"0", "3", "9"}) {
    std::string first;
    for (const char* threads : {"1", "2", "8"}) {
      const auto out = (dir / (std::string("out_") + crf + "_" + threads + ".aevs")).string();
      const std::string in = (dir / "clip").string();
      const char* argv[] = {"evtsuite", "transcode", in.c_str(), "-o", out.c_str(), "--crf", crf, "--threads", threads};
      std::ostringstream sink;
      if (cli::main(9, argv, sink, sink) != 0) return {false, "transcode failed: " + sink.str()};
      const auto bytes = slurp(out);
      if (first.empty()) first = bytes;
      ok = ok && !bytes.empty() && bytes == first;
    }
    detail += "crf " + std::string(crf) + " " + std::to_string(first.size()) + " B; ";
  }
  fs::remove_all(dir);
  return {ok, detail + "threads 1/2/8 identical"};
}

Outcome protocol_check() {
  const auto pure = oracle::check_pure_protocol(5);
  if (!pure.violation.empty()) return {false, pure.violation};

  const fs::path dir = fs::temp_directory_path() / "evtsuite_acceptance_proto";
  fs::remove_all(dir);
  fs::create_directories(dir / "clip");
  const auto small = oracle::noise_clip(4, 4, 3);
  for (std::size_t i = 0; i < small.size(); ++i)
    write_pnm(dir / "clip" / ("f" + std::to_string(10 + i) + ".pgm"), small[i]);
  const auto st = oracle::transcode_clip(small, params_from_crf(3, 255), 3);
  std::ofstream(dir / "s.aevs", std::ios::binary) << oracle::encode(st.meta, st.events);
  const auto live = oracle::check_live_protocol(dir / "clip", dir / "s.aevs", 3);
  if (!live.violation.empty()) return {false, "live: " + live.violation};

  fs::create_directories(dir / "grad");
  const auto clip = oracle::moving_gradient_clip(32, 24, 16, 2);
  for (std::size_t i = 0; i < clip.size(); ++i)
    write_pnm(dir / "grad" / ("f" + std::to_string(100 + i) + ".pgm"), clip[i]);
  service::SessionOptions opt;
  opt.max_preview_rate = 0;
  opt.workers = 2;
  service::Session s(opt);
  using service::json;
  s.handle(json{{"type", "set_crf"}, {"crf", 0}});
  s.handle(json{{"type", "open_source"}, {"path", (dir / "grad").string()}});
  int step = 0;
  while (s.runnable()) {
    if (step == 4) s.handle(json{{"type", "set_crf"}, {"crf", 9}});
    if (step == 9) s.handle(json{{"type", "set_params"}, {"mode", "multinode"}, {"m_threshold", 1}});
    s.step();
    ++step;
  }
  const auto path = dir / "mid.aevs";
  const auto ack = s.handle(json{{"type", "export"}, {"path", path.string()}});
  std::ifstream in(path, std::ios::binary);
  const auto decoded = read_stream(in);
  const bool ok = ack.at(0)["type"] == "session_update" && decoded.events == s.events() &&
                  oracle::per_pixel_monotonic(decoded.meta, decoded.events) && !decoded.events.empty();
  fs::remove_all(dir);
  return {ok, std::to_string(pure.sequences) + " pure sequences, " + std::to_string(live.sequences) +
                  " live sequences; mid-stream set_crf stream of " + std::to_string(decoded.events.size()) +
                  " events decodes and is per-pixel monotonic"};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {"codec round-trip", codec_round_trip},
      {"integration oracle", integration_oracle},
      {"worked example", worked_example},
      {"lossless loop", lossless_loop},
      {"crf monotonicity", crf_monotonicity},
      {"collapse throughput", collapse_throughput},
      {"fast oracle", fast_oracle},
      {"stats", stats_criterion},
      {"determinism", determinism},
      {"protocol model check", protocol_check},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS  " : "FAIL  ") << c.name << ": " << o.detail << std::endl;
  }
  std::cout << (failures ? std::to_string(failures) + " criteria failed" : "all criteria passed") << std::endl;
  return failures ? 1 : 0;
}
