#include <CLI11.hpp>

#include <csignal>
#include <iostream>
#include <thread>

#include "evtsuite/service_server.hpp"

namespace {
std::atomic<bool> g_stop{false};
void on_signal(int) { g_stop = true; }
}  // namespace

int main(int argc, char** argv) {
  using namespace evtsuite::service;
  CLI::App app{"evtsuite session service"};
  std::string host = "127.0.0.1";
  int port = 7878;
  int http_port = 0;
  std::string ui_dir;
  unsigned threads = 0;
  double preview_rate = 30.0;
  app.add_option("--host", host, "Bind address");
  app.add_option("--port", port, "Message stream port")->check(CLI::Range(0, 65535));
  app.add_option("--ui-dir", ui_dir, "Serve static UI assets and the HTTP bridge")->check(CLI::ExistingDirectory);
  app.add_option("--http-port", http_port, "HTTP bridge port (default: --port + 1)")->check(CLI::Range(0, 65535));
  app.add_option("--threads", threads, "Transcode worker threads (0: auto)");
  app.add_option("--max-preview-rate", preview_rate, "Preview frames per second (0: unthrottled)")
      ->check(CLI::NonNegativeNumber);
  CLI11_PARSE(app, argc, argv);

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);

  SessionOptions opt;
  opt.workers = threads;
  opt.max_preview_rate = preview_rate;
  try {
    Hub hub(opt);
    TcpServer tcp(hub);
    const int bound = tcp.bind(host, port);
    tcp.start();
    std::cerr << "listening on " << host << ":" << bound << "\n";

    httplib::Server http;
    std::jthread http_thread;
    if (!ui_dir.empty()) {
      mount_http(http, hub, std::filesystem::path(ui_dir));
      const int hp = http_port ? http_port : bound + 1;
      if (!http.bind_to_port(host, hp)) throw evtsuite::SinkError("cannot listen on http port " + std::to_string(hp));
      http_thread = std::jthread([&] { http.listen_after_bind(); });
      std::cerr << "ui at http://" << host << ":" << hp << "/\n";
    }
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    http.stop();
    tcp.stop();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
