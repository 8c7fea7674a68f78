#include "vc/net.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <cstring>

#include <spdlog/spdlog.h>

namespace vc::net {

namespace {

std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

timeval to_timeval(Millis ms) {
  timeval tv{};
  tv.tv_sec = static_cast<time_t>(ms.count() / 1000);
  tv.tv_usec = static_cast<suseconds_t>((ms.count() % 1000) * 1000);
  return tv;
}

void apply_timeouts(int fd, Millis timeout) {
  const auto tv = to_timeval(timeout);
  ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
  ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
}

}  // namespace

Endpoint Endpoint::parse(std::string_view text) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos || colon + 1 >= text.size()) {
    throw std::invalid_argument("endpoint must be host:port, got '" + std::string(text) + "'");
  }
  Endpoint ep;
  ep.host = std::string(text.substr(0, colon));
  if (ep.host.empty()) ep.host = "127.0.0.1";
  unsigned port = 0;
  const auto digits = text.substr(colon + 1);
  auto [end, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), port);
  if (ec != std::errc{} || end != digits.data() + digits.size() || port > 65535) {
    throw std::invalid_argument("bad port in endpoint '" + std::string(text) + "'");
  }
  ep.port = static_cast<std::uint16_t>(port);
  return ep;
}

Socket& Socket::operator=(Socket&& other) noexcept {
  if (this != &other) {
    close();
    fd_ = std::exchange(other.fd_, -1);
  }
  return *this;
}

Socket::~Socket() { close(); }

void Socket::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

void Socket::shutdown() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

Connection::Connection(Socket socket, Millis io_timeout) : socket_(std::move(socket)) {
  set_io_timeout(io_timeout);
  int one = 1;
  ::setsockopt(socket_.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

void Connection::set_io_timeout(Millis timeout) { apply_timeouts(socket_.fd(), timeout); }

Connection Connection::open(const Endpoint& to, Millis connect_timeout, Millis io_timeout) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const auto port = std::to_string(to.port);
  if (int rc = ::getaddrinfo(to.host.c_str(), port.c_str(), &hints, &res); rc != 0) {
    throw NetError("cannot resolve " + to.str() + ": " + ::gai_strerror(rc));
  }
  std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, &::freeaddrinfo);

  Socket sock(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!sock.valid()) throw NetError(errno_text("socket"));
  const int flags = ::fcntl(sock.fd(), F_GETFL, 0);
  ::fcntl(sock.fd(), F_SETFL, flags | O_NONBLOCK);
  if (::connect(sock.fd(), res->ai_addr, res->ai_addrlen) != 0) {
    if (errno != EINPROGRESS) throw NetError(errno_text(("connect " + to.str()).c_str()));
    pollfd pfd{sock.fd(), POLLOUT, 0};
    const int rc = ::poll(&pfd, 1, static_cast<int>(connect_timeout.count()));
    if (rc == 0) throw NetError("connect " + to.str() + ": timed out");
    if (rc < 0) throw NetError(errno_text("poll"));
    int err = 0;
    socklen_t len = sizeof err;
    ::getsockopt(sock.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
    if (err != 0) throw NetError("connect " + to.str() + ": " + std::strerror(err));
  }
  ::fcntl(sock.fd(), F_SETFL, flags);
  return Connection(std::move(sock), io_timeout);
}

void Connection::send_raw(std::string_view bytes) {
  while (!bytes.empty()) {
    const ssize_t n = ::send(socket_.fd(), bytes.data(), bytes.size(), MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw NetError(errno_text("send"));
    }
    bytes.remove_prefix(static_cast<std::size_t>(n));
  }
}

void Connection::send(const protocol::Message& msg) { send_raw(protocol::encode(msg)); }

std::optional<std::string> Connection::read_frame() {
  for (;;) {
    const auto nl = buffer_.find('\n', scanned_);
    if (nl != std::string::npos) {
      std::string frame = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      scanned_ = 0;
      return frame;
    }
    scanned_ = buffer_.size();
    if (buffer_.size() > protocol::kMaxFrameBytes) throw NetError("incoming frame exceeds the 16 MiB limit");
    char chunk[65536];
    const ssize_t n = ::recv(socket_.fd(), chunk, sizeof chunk, 0);
    if (n < 0) {
      if (errno == EINTR) continue;
      if (errno == EAGAIN || errno == EWOULDBLOCK) throw NetError("receive timed out");
      throw NetError(errno_text("recv"));
    }
    if (n == 0) {
      if (buffer_.empty()) return std::nullopt;
      throw NetError("connection closed mid-frame");
    }
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

protocol::Message Connection::receive() {
  auto frame = read_frame();
  if (!frame) throw NetError("connection closed before a reply");
  return protocol::decode(*frame);
}

std::string Connection::peer_host() const {
  sockaddr_in addr{};
  socklen_t len = sizeof addr;
  if (::getpeername(socket_.fd(), reinterpret_cast<sockaddr*>(&addr), &len) != 0) return "127.0.0.1";
  char buf[INET_ADDRSTRLEN] = {};
  ::inet_ntop(AF_INET, &addr.sin_addr, buf, sizeof buf);
  return buf;
}

protocol::Message request(const Endpoint& to, const protocol::Message& req, Millis timeout) {
  auto conn = Connection::open(to, timeout, timeout);
  conn.send(req);
  return conn.receive();
}

Listener::Listener(std::uint16_t port, const std::string& bind_host) {
  socket_ = Socket(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!socket_.valid()) throw NetError(errno_text("socket"));
  int one = 1;
  ::setsockopt(socket_.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, bind_host.c_str(), &addr.sin_addr) != 1) throw NetError("bad bind address " + bind_host);
  if (::bind(socket_.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    throw NetError(errno_text(("bind port " + std::to_string(port)).c_str()));
  }
  if (::listen(socket_.fd(), 128) != 0) throw NetError(errno_text("listen"));
  socklen_t len = sizeof addr;
  ::getsockname(socket_.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

Socket Listener::accept() {
  while (!closed_) {
    const int fd = ::accept4(socket_.fd(), nullptr, nullptr, SOCK_CLOEXEC);
    if (fd >= 0) return Socket(fd);
    if (errno == EINTR || errno == ECONNABORTED) continue;
    if (!closed_) spdlog::warn("accept failed: {}", std::strerror(errno));
    break;
  }
  return Socket();
}

void Listener::shutdown() {
  closed_ = true;
  socket_.shutdown();
}

TcpServer::TcpServer(std::uint16_t port, Handler handler, Millis io_timeout)
    : listener_(port), handler_(std::move(handler)), io_timeout_(io_timeout) {
  acceptor_ = std::thread([this] { accept_loop(); });
}

TcpServer::~TcpServer() { stop(); }

void TcpServer::accept_loop() {
  for (;;) {
    Socket s = listener_.accept();
    if (!s.valid()) return;
    {
      std::lock_guard lk(mu_);
      if (stopped_) return;
      ++active_;
    }
    std::thread([this, sock = std::move(s)]() mutable {
      try {
        Connection conn(std::move(sock), io_timeout_);
        handler_(conn);
      } catch (const std::exception& e) {
        spdlog::debug("connection handler: {}", e.what());
      }
      std::lock_guard lk(mu_);
      if (--active_ == 0) idle_.notify_all();
    }).detach();
  }
}

void TcpServer::stop() {
  {
    std::lock_guard lk(mu_);
    if (stopped_) return;
    stopped_ = true;
  }
  listener_.shutdown();
  if (acceptor_.joinable()) acceptor_.join();
  std::unique_lock lk(mu_);
  idle_.wait(lk, [this] { return active_ == 0; });
}

}  // namespace vc::net
