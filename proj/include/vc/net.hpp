#pragma once

// Blocking TCP plumbing for the framed protocol: one connection per
// request/response exchange.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>

#include "vc/protocol.hpp"

namespace vc::net {

using Clock = std::chrono::steady_clock;
using Millis = std::chrono::milliseconds;

class NetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  /// Accepts "host:port"; throws std::invalid_argument otherwise.
  static Endpoint parse(std::string_view text);
  std::string str() const { return host + ":" + std::to_string(port); }
  bool operator==(const Endpoint&) const = default;
};

/// Owns a socket descriptor.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
  Socket& operator=(Socket&& other) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket();

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void close();
  void shutdown();

 private:
  int fd_ = -1;
};

/// A connected stream that sends and receives whole frames.
class Connection {
 public:
  explicit Connection(Socket socket, Millis io_timeout = Millis{5000});

  /// Throws NetError on failure.
  static Connection open(const Endpoint& to, Millis connect_timeout = Millis{3000},
                         Millis io_timeout = Millis{5000});

  void send(const protocol::Message& msg);
  void send_raw(std::string_view bytes);
  /// Next frame without its newline, or nullopt on orderly EOF. Throws
  /// NetError on timeout or oversize frames.
  std::optional<std::string> read_frame();
  /// Reads and decodes the next frame; EOF is an error here.
  protocol::Message receive();

  /// Peer IPv4 address in dotted form.
  std::string peer_host() const;
  void set_io_timeout(Millis timeout);

 private:
  Socket socket_;
  std::string buffer_;
  std::size_t scanned_ = 0;
};

/// Sends `request` and returns the first reply frame.
protocol::Message request(const Endpoint& to, const protocol::Message& request,
                          Millis timeout = Millis{5000});

/// Listening socket on 0.0.0.0. Port 0 picks an ephemeral port.
class Listener {
 public:
  explicit Listener(std::uint16_t port, const std::string& bind_host = "0.0.0.0");
  std::uint16_t port() const { return port_; }
  /// Blocks; returns an invalid socket once the listener is shut down.
  Socket accept();
  void shutdown();

 private:
  Socket socket_;
  std::uint16_t port_ = 0;
  std::atomic<bool> closed_{false};
};

/// Accept loop that runs `handler` on a thread per connection. stop() waits
/// for in-flight handlers.
class TcpServer {
 public:
  using Handler = std::function<void(Connection&)>;

  TcpServer(std::uint16_t port, Handler handler, Millis io_timeout = Millis{5000});
  ~TcpServer();
  TcpServer(const TcpServer&) = delete;
  TcpServer& operator=(const TcpServer&) = delete;

  std::uint16_t port() const { return listener_.port(); }
  void stop();

 private:
  void accept_loop();

  Listener listener_;
  Handler handler_;
  Millis io_timeout_;
  std::mutex mu_;
  std::condition_variable idle_;
  int active_ = 0;
  bool stopped_ = false;
  std::thread acceptor_;
};

}  // namespace vc::net
