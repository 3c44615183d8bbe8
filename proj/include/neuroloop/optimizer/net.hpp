#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <optional>
#include <string>
#include <utility>

#include "neuroloop/core/error.hpp"

namespace neuroloop::net {

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { close(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }

  void close() {
    if (fd_ >= 0) ::close(std::exchange(fd_, -1));
  }
  // Wakes any thread blocked on the socket without releasing the descriptor.
  void shutdown() const {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  }

 private:
  int fd_ = -1;
};

inline std::string errno_text() { return std::strerror(errno); }

inline sockaddr_in resolve(const std::string& host, std::uint16_t port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  const std::string h = (host.empty() || host == "localhost") ? "127.0.0.1" : host;
  if (::inet_pton(AF_INET, h.c_str(), &addr.sin_addr) == 1) return addr;
  addrinfo hints{}, *res = nullptr;
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  if (::getaddrinfo(h.c_str(), nullptr, &hints, &res) != 0 || !res) throw IoError("cannot resolve host '" + host + "'");
  addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  ::freeaddrinfo(res);
  return addr;
}

/// Listening socket; port 0 picks an ephemeral port, reported by bound_port.
inline Socket listen_tcp(const std::string& host, std::uint16_t port, int backlog = 64) {
  Socket s(::socket(AF_INET, SOCK_STREAM, 0));
  if (!s.valid()) throw IoError("socket: " + errno_text());
  int one = 1;
  ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  auto addr = resolve(host, port);
  if (::bind(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
    throw IoError("cannot bind " + host + ":" + std::to_string(port) + ": " + errno_text());
  if (::listen(s.fd(), backlog) != 0) throw IoError("listen: " + errno_text());
  return s;
}

inline std::uint16_t bound_port(const Socket& s) {
  sockaddr_in addr{};
  socklen_t len = sizeof addr;
  if (::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&addr), &len) != 0) throw IoError("getsockname: " + errno_text());
  return ntohs(addr.sin_port);
}

inline Socket connect_tcp(const std::string& host, std::uint16_t port) {
  Socket s(::socket(AF_INET, SOCK_STREAM, 0));
  if (!s.valid()) throw IoError("socket: " + errno_text());
  auto addr = resolve(host, port);
  if (::connect(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
    throw IoError("cannot connect to " + host + ":" + std::to_string(port) + ": " + errno_text());
  int one = 1;
  ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return s;
}

// Waits for a pending connection; nullopt on timeout, invalid socket once the
// listener was shut down.
inline std::optional<Socket> accept_for(const Socket& listener, int timeout_ms) {
  pollfd p{listener.fd(), POLLIN, 0};
  const int r = ::poll(&p, 1, timeout_ms);
  if (r == 0) return std::nullopt;
  if (r < 0) {
    if (errno == EINTR) return std::nullopt;
    return Socket{};
  }
  if (p.revents & (POLLERR | POLLHUP | POLLNVAL)) return Socket{};
  const int fd = ::accept(listener.fd(), nullptr, nullptr);
  if (fd < 0) return errno == EINTR || errno == EAGAIN ? std::optional<Socket>{} : std::optional<Socket>{Socket{}};
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return Socket(fd);
}

inline void send_all(const Socket& s, std::string_view data) {
  while (!data.empty()) {
    const auto n = ::send(s.fd(), data.data(), data.size(), MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError("send: " + errno_text());
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
}

/// Newline-delimited reader over a socket.
class LineReader {
 public:
  explicit LineReader(const Socket& s, std::size_t max_line = 1 << 20) : s_(s), max_line_(max_line) {}

  // Next line without its terminator; nullopt on orderly close.
  std::optional<std::string> read_line() {
    for (;;) {
      const auto nl = buf_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buf_.substr(0, nl);
        buf_.erase(0, nl + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      if (buf_.size() > max_line_) throw ProtocolError("frame exceeds maximum line length");
      char chunk[4096];
      const auto n = ::recv(s_.fd(), chunk, sizeof chunk, 0);
      if (n == 0) return std::nullopt;
      if (n < 0) {
        if (errno == EINTR) continue;
        throw IoError("recv: " + errno_text());
      }
      buf_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 private:
  const Socket& s_;
  std::size_t max_line_;
  std::string buf_;
};

}  // namespace neuroloop::net
