#pragma once

// Network front ends for the session service: a TCP endpoint carrying
// length-delimited JSON, and an HTTP bridge for browser clients.

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <httplib.h>

#include <atomic>
#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <filesystem>
#include <mutex>
#include <optional>
#include <stop_token>
#include <string>
#include <thread>

#include "evtsuite/session.hpp"
#include "evtsuite/wire.hpp"

namespace evtsuite::service {

/// Bounded log of outbound messages, numbered from 1, for polling clients.
class MessageLog {
 public:
  explicit MessageLog(std::size_t capacity = 4096) : capacity_(capacity) {}

  void append(const json& msg) {
    {
      std::lock_guard lock(mu_);
      entries_.push_back({++last_, msg});
      if (entries_.size() > capacity_) entries_.pop_front();
    }
    cv_.notify_all();
  }

  /// Messages numbered above `after`, waiting up to `timeout` for the first.
  json since(std::uint64_t after, std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, timeout, [&] { return last_ > after; });
    json msgs = json::array();
    for (const auto& [seq, m] : entries_)
      if (seq > after) msgs.push_back(m);
    return json{{"next", last_}, {"messages", std::move(msgs)}};
  }

  std::uint64_t last() const {
    std::lock_guard lock(mu_);
    return last_;
  }

 private:
  std::size_t capacity_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::pair<std::uint64_t, json>> entries_;
  std::uint64_t last_ = 0;
};

/// Owns the session runner and fans its output out to the TCP client and the log.
class Hub {
 public:
  explicit Hub(SessionOptions opt) : runner_(std::move(opt), [this](const json& m) { publish(m); }) {}

  void submit(json msg) { runner_.submit(std::move(msg)); }
  MessageLog& log() { return log_; }
  SessionState state() const { return runner_.state(); }

  void attach(int fd) {
    std::lock_guard lock(client_mu_);
    client_fd_ = fd;
  }
  void detach() {
    std::lock_guard lock(client_mu_);
    client_fd_ = -1;
  }

  /// Sends to the attached client only, bypassing the log.
  void reply(const json& m) {
    std::lock_guard lock(client_mu_);
    if (client_fd_ >= 0 && !send_all(client_fd_, wire::encode_frame(m))) client_fd_ = -1;
  }

  static bool send_all(int fd, const std::string& bytes) {
    std::size_t off = 0;
    while (off < bytes.size()) {
      const auto n = ::send(fd, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) return false;
      off += static_cast<std::size_t>(n);
    }
    return true;
  }

 private:
  void publish(const json& m) {
    log_.append(m);
    std::lock_guard lock(client_mu_);
    if (client_fd_ >= 0 && !send_all(client_fd_, wire::encode_frame(m))) client_fd_ = -1;
  }

  MessageLog log_;
  std::mutex client_mu_;
  int client_fd_ = -1;
  SessionRunner runner_;  // last: its worker stops before the sinks go away
};

/// Single-client TCP endpoint. A second concurrent client is refused with an error frame.
class TcpServer {
 public:
  explicit TcpServer(Hub& hub) : hub_(hub) {}
  ~TcpServer() { stop(); }

  /// Binds to host:port; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw SinkError(std::string("socket: ") + std::strerror(errno));
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) throw ArgumentError("bad host address: " + host);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 || ::listen(listen_fd_, 4) < 0)
      throw SinkError("cannot listen on " + host + ":" + std::to_string(port) + ": " + std::strerror(errno));
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    return ntohs(addr.sin_port);
  }

  void start() {
    thread_ = std::jthread([this](std::stop_token st) { accept_loop(st); });
  }

  void stop() {
    if (thread_.joinable()) {
      thread_.request_stop();
      thread_.join();
    }
    if (listen_fd_ >= 0) ::close(listen_fd_);
    listen_fd_ = -1;
  }

 private:
  static bool readable(int fd, int timeout_ms) {
    pollfd p{fd, POLLIN, 0};
    return ::poll(&p, 1, timeout_ms) > 0;
  }

  void accept_loop(std::stop_token st) {
    while (!st.stop_requested()) {
      if (!readable(listen_fd_, 100)) continue;
      const int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) continue;
      serve_client(fd, st);
    }
  }

  void serve_client(int fd, std::stop_token st) {
    hub_.attach(fd);
    wire::FrameDecoder decoder;
    char buf[65536];
    bool open = true;
    while (open && !st.stop_requested()) {
      refuse_waiting_clients();
      if (!readable(fd, 100)) continue;
      const auto n = ::recv(fd, buf, sizeof buf, 0);
      if (n <= 0) break;
      decoder.feed(std::string_view(buf, static_cast<std::size_t>(n)));
      try {
        while (auto msg = decoder.next()) {
          if (msg->is_discarded())
            hub_.reply(json{{"type", "error"}, {"message", "malformed JSON"}});
          else
            hub_.submit(std::move(*msg));
        }
      } catch (const FormatError& e) {
        hub_.reply(json{{"type", "error"}, {"message", e.what()}});
        open = false;
      }
    }
    hub_.detach();
    ::close(fd);
  }

  void refuse_waiting_clients() {
    while (readable(listen_fd_, 0)) {
      const int other = ::accept(listen_fd_, nullptr, nullptr);
      if (other < 0) return;
      Hub::send_all(other, wire::encode_frame(json{{"type", "error"}, {"message", "busy"}}));
      ::close(other);
    }
  }

  Hub& hub_;
  int listen_fd_ = -1;
  std::jthread thread_;
};

/// HTTP bridge: POST /api/send takes one client message, GET /api/events?since=N
/// long-polls the message log, GET /api/state returns a session_update. Static
/// files come from ui_dir when given.
inline void mount_http(httplib::Server& server, Hub& hub, const std::optional<std::filesystem::path>& ui_dir,
                       std::chrono::milliseconds poll_timeout = std::chrono::milliseconds(25000)) {
  server.Post("/api/send", [&hub](const httplib::Request& req, httplib::Response& res) {
    auto msg = json::parse(req.body, nullptr, false);
    if (msg.is_discarded()) {
      res.status = 400;
      res.set_content(json{{"type", "error"}, {"message", "malformed JSON"}}.dump(), "application/json");
      return;
    }
    hub.submit(std::move(msg));
    res.status = 202;
    res.set_content(json{{"accepted", true}}.dump(), "application/json");
  });
  server.Get("/api/events", [&hub, poll_timeout](const httplib::Request& req, httplib::Response& res) {
    std::uint64_t after = 0;
    if (req.has_param("since")) {
      try {
        after = std::stoull(req.get_param_value("since"));
      } catch (const std::exception&) {
        res.status = 400;
        return;
      }
    }
    res.set_content(hub.log().since(after, poll_timeout).dump(), "application/json");
  });
  server.Get("/api/state", [&hub](const httplib::Request&, httplib::Response& res) {
    res.set_content(session_update(hub.state()).dump(), "application/json");
  });
  if (ui_dir && !server.set_mount_point("/", ui_dir->string()))
    throw ArgumentError("ui directory not found: " + ui_dir->string());
}

}  // namespace evtsuite::service
