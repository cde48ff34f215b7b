#pragma once

// Command-line front end: transcode, play (frame export) and info.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

#include "evtsuite/codec.hpp"
#include "evtsuite/fast.hpp"
#include "evtsuite/params.hpp"
#include "evtsuite/reconstruct.hpp"
#include "evtsuite/sources.hpp"
#include "evtsuite/stats.hpp"
#include "evtsuite/transcoder.hpp"

namespace evtsuite::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitUsage = 2,
  kExitFormat = 3,
  kExitCorrupt = 4,
  kExitSink = 5,
};

enum class Subcommand { Transcode, Play, Info };
enum class PlaybackMode { Accurate, Fast };

struct CliConfig {
  Subcommand subcommand = Subcommand::Info;
  std::filesystem::path input;
  std::filesystem::path output;
  std::optional<int> crf;
  std::optional<PixelMode> mode;
  std::optional<int> m_threshold;
  std::optional<Tick> delta_t_max;
  /// transcode: frame rate of a PNM sequence. play: output frame rate.
  std::optional<double> fps;
  ViewMode view = ViewMode::Intensity;
  PlaybackMode playback = PlaybackMode::Accurate;
  std::optional<std::size_t> buffer_cap;
  bool features = false;
  bool full = false;
  /// 0 = EVTSUITE_THREADS or hardware concurrency.
  unsigned threads = 0;
};

/// CRF-derived parameters with explicit overrides applied on top.
inline ParamSet resolve_params(const CliConfig& cfg, Tick ref_interval) {
  ParamSet p = params_from_crf(cfg.crf.value_or(kDefaultCrf), ref_interval);
  if (cfg.mode) p.mode = *cfg.mode;
  if (cfg.m_threshold) p.m_threshold = *cfg.m_threshold;
  if (cfg.delta_t_max) p.delta_t_max = *cfg.delta_t_max;
  if (cfg.features) p.feature_boost = default_feature_boost(ref_interval);
  if (auto err = validate(p, ref_interval); !err.empty()) throw ArgumentError(err);
  return p;
}

/// Parses argv. Returns the config, or an exit code when parsing ends the
/// run (help printed, or a usage error).
inline std::variant<CliConfig, int> parse_args(int argc, const char* const* argv, std::ostream& out,
                                               std::ostream& err) {
  CLI::App app{"Event stream transcoder and player", "evtsuite"};
  app.require_subcommand(1);
  CliConfig cfg;
  std::string mode, view, playback;
  int crf = -1;

  auto* tx = app.add_subcommand("transcode", "Transcode a video or DVS recording into an event stream");
  tx->add_option("input", cfg.input, "PNM directory, .y4m file or DVS text file")->required();
  tx->add_option("-o,--output", cfg.output, "Output .aevs path")->required();
  tx->add_option("--crf", crf, "Quality level 0 (lossless) .. 9")->check(CLI::Range(0, 9));
  tx->add_option("--mode", mode, "Pixel mode")->check(CLI::IsMember({"collapse", "multinode"}));
  tx->add_option("--m", cfg.m_threshold, "Override the intensity change threshold M")->check(CLI::Range(0, 255));
  tx->add_option("--dtmax", cfg.delta_t_max, "Override delta_t_max in ticks")->check(CLI::PositiveNumber);
  tx->add_option("--fps", cfg.fps, "Frame rate of a PNM sequence (default 30)")->check(CLI::PositiveNumber);
  tx->add_flag("--features", cfg.features, "Boost quality around FAST features");
  tx->add_option("--threads", cfg.threads, "Worker threads (default: EVTSUITE_THREADS or all cores)");

  auto* play = app.add_subcommand("play", "Reconstruct frames from an event stream into a PGM/PPM sequence");
  play->add_option("input", cfg.input, "Input .aevs path")->required();
  play->add_option("-o,--output", cfg.output, "Output directory")->required();
  play->add_option("--fps", cfg.fps, "Output frame rate (default: one frame per reference interval)")
      ->check(CLI::PositiveNumber);
  play->add_option("--view", view, "View mode")->check(CLI::IsMember({"intensity", "d", "dt"}));
  play->add_option("--playback", playback, "Reconstruction mode")->check(CLI::IsMember({"accurate", "fast"}));
  play->add_option("--buffer-cap", cfg.buffer_cap, "Accurate mode: maximum buffered frames")
      ->check(CLI::PositiveNumber);

  auto* info = app.add_subcommand("info", "Print stream header fields and, with --full, statistics");
  info->add_option("input", cfg.input, "Input .aevs path")->required();
  info->add_flag("--full", cfg.full, "Scan the whole stream for event rate and dynamic range");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "evtsuite: " << e.what() << '\n';
    return kExitUsage;
  }

  if (tx->parsed()) cfg.subcommand = Subcommand::Transcode;
  if (play->parsed()) cfg.subcommand = Subcommand::Play;
  if (info->parsed()) cfg.subcommand = Subcommand::Info;
  if (crf >= 0) cfg.crf = crf;
  if (!mode.empty()) cfg.mode = mode == "collapse" ? PixelMode::Collapse : PixelMode::MultiNode;
  if (!view.empty()) cfg.view = *parse_view_mode(view);
  if (playback == "fast") cfg.playback = PlaybackMode::Fast;
  return cfg;
}

/// Header fields always; statistics only when `full`. Without `full` reads
/// exactly the header bytes from `in`.
inline void run_info(std::istream& in, bool full, std::ostream& out) {
  StreamReader reader(in);
  print_header_table(out, reader.meta());
  if (!full) return;
  const auto stats = compute_stats(reader);
  print_stats_table(out, stats);
}

namespace detail {

inline void print_report(std::ostream& out, const TranscodeReport& r, const StreamMeta& meta, const ParamSet& p,
                         std::uint64_t bytes) {
  out << "mode:              " << to_string(p.mode) << '\n'
      << "M threshold:       " << p.m_threshold << '\n'
      << "delta_t_max:       " << p.delta_t_max << " ticks\n"
      << "intervals:         " << r.frames_consumed << '\n'
      << "events:            " << r.events_emitted << '\n'
      << "bytes written:     " << bytes << '\n';
  if (r.frames_consumed > 0 && meta.sample_count() > 0) {
    const auto flags = out.flags();
    out << std::fixed << std::setprecision(3) << "events/sample:     "
        << static_cast<double>(r.events_emitted) / (static_cast<double>(r.frames_consumed) * meta.sample_count())
        << '\n';
    out.flags(flags);
  }
  if (r.clamped_levels > 0) out << "clamped levels:    " << r.clamped_levels << '\n';
}

inline int run_transcode(const CliConfig& cfg, std::ostream& out) {
  if (cfg.buffer_cap || cfg.full) throw ArgumentError("--buffer-cap/--full do not apply to transcode");
  AnySource source = open_source(cfg.input, cfg.fps.value_or(30.0));
  std::ofstream file(cfg.output, std::ios::binary | std::ios::trunc);
  if (!file) throw SinkError("cannot open output " + cfg.output.string());
  const Tick ref = kDefaultRefInterval;
  const ParamSet p = resolve_params(cfg, ref);
  const FeatureFeedback feedback = cfg.features ? make_fast_feedback() : FeatureFeedback{};

  TranscodeReport report;
  StreamMeta meta;
  std::uint64_t bytes = 0;
  auto drive = [&](auto& src, const StreamMeta& m) {
    meta = m;
    StreamWriter writer(file, meta);
    report = transcode(src, p, meta, [&](std::span<const Event> ev) { writer.write(ev); }, feedback, cfg.threads);
    writer.flush();
    bytes = writer.bytes_written();
  };
  const int crf = cfg.crf.value_or(kDefaultCrf);
  if (auto* framed = std::get_if<std::unique_ptr<FrameSource>>(&source))
    drive(**framed, framed_meta(**framed, p, crf, ref));
  else {
    auto& dvs = *std::get<std::unique_ptr<DvsSource>>(source);
    drive(dvs, dvs_meta(dvs, p, crf, ref));
  }
  print_report(out, report, meta, p, bytes);
  return kExitOk;
}

inline int run_play(const CliConfig& cfg, std::ostream& out) {
  std::ifstream file(cfg.input, std::ios::binary);
  if (!file) throw FormatError("cannot open " + cfg.input.string());
  StreamReader reader(file);
  const auto& meta = reader.meta();
  std::uint32_t fps = native_fps(meta);
  if (cfg.fps) {
    if (*cfg.fps != std::floor(*cfg.fps)) throw ArgumentError("--fps must be an integer for playback");
    fps = static_cast<std::uint32_t>(*cfg.fps);
  }
  const Tick interval = frame_interval_for(meta, fps);

  std::error_code ec;
  std::filesystem::create_directories(cfg.output, ec);
  if (ec || !std::filesystem::is_directory(cfg.output))
    throw SinkError("cannot create output directory " + cfg.output.string());

  std::uint64_t written = 0;
  const char* ext = meta.channels == 3 ? ".ppm" : ".pgm";
  auto emit = [&](std::vector<Image>& frames) {
    for (const auto& f : frames) {
      char name[32];
      std::snprintf(name, sizeof name, "frame_%06llu", static_cast<unsigned long long>(written++));
      const auto path = cfg.output / (std::string(name) + ext);
      std::ofstream os(path, std::ios::binary | std::ios::trunc);
      if (!os) throw SinkError("cannot write " + path.string());
      write_pnm(os, f);
      if (!os) throw SinkError("write failed: " + path.string());
    }
    frames.clear();
  };

  std::vector<Image> frames;
  if (cfg.view != ViewMode::Intensity) {
    ViewCursor cursor(meta, interval, cfg.view);
    while (auto e = reader.next()) {
      cursor.apply_event(*e, frames);
      emit(frames);
    }
    cursor.finish(frames);
  } else if (cfg.playback == PlaybackMode::Fast) {
    FrameCursor cursor(meta, interval);
    while (auto e = reader.next()) {
      cursor.apply_event(*e, frames);
      emit(frames);
    }
    cursor.finish(frames);
  } else {
    AccurateReconstructor r(meta, interval, cfg.buffer_cap);
    while (auto e = reader.next()) {
      r.push(*e, frames);
      emit(frames);
    }
    r.finish(frames);
  }
  emit(frames);
  out << "frames written:    " << written << '\n' << "output fps:        " << fps << '\n';
  return kExitOk;
}

}  // namespace detail

/// Runs one subcommand and maps failures to exit codes.
inline int run(const CliConfig& cfg, std::ostream& out, std::ostream& err) {
  try {
    switch (cfg.subcommand) {
      case Subcommand::Transcode: return detail::run_transcode(cfg, out);
      case Subcommand::Play: return detail::run_play(cfg, out);
      case Subcommand::Info: {
        std::ifstream file(cfg.input, std::ios::binary);
        if (!file) throw FormatError("cannot open " + cfg.input.string());
        run_info(file, cfg.full, out);
        return kExitOk;
      }
    }
  } catch (const ArgumentError& e) {
    err << "evtsuite: " << e.what() << '\n';
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "evtsuite: input format error: " << e.what() << '\n';
    return kExitFormat;
  } catch (const CorruptionError& e) {
    err << "evtsuite: corrupt stream: " << e.what() << '\n';
    return kExitCorrupt;
  } catch (const SinkError& e) {
    err << "evtsuite: output error: " << e.what() << '\n';
    return kExitSink;
  } catch (const EncodeError& e) {
    err << "evtsuite: " << e.what() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "evtsuite: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

inline int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  auto parsed = parse_args(argc, argv, out, err);
  if (auto* code = std::get_if<int>(&parsed)) return *code;
  return run(std::get<CliConfig>(parsed), out, err);
}

}  // namespace evtsuite::cli
