#pragma once

// Wire protocol: TCP stream of frames, each a 4-byte big-endian length
// followed by a UTF-8 JSON envelope {"id": u32, "type": str, "body": {...}}.
// Server-initiated messages (publish, subscription_dropped) use id 0.

#include <poll.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "cpfen/common.hpp"

namespace cpfen::proto {

inline constexpr int kProtocolVersion = 1;
inline constexpr std::size_t kMaxFrameBytes = 4u << 20;

// error codes carried in {"type":"error","body":{"code":...}}
inline constexpr const char* kProtocolError = "PROTOCOL_ERROR";
inline constexpr const char* kUnsupported = "UNSUPPORTED";
inline constexpr const char* kVersionUnsupported = "VERSION_UNSUPPORTED";
inline constexpr const char* kBadRequest = "BAD_REQUEST";
inline constexpr const char* kShuttingDown = "SHUTTING_DOWN";

class ProtocolError : public Error {
 public:
  explicit ProtocolError(const std::string& what) : Error(kProtocolError, what) {}
};

class TransportError : public Error {
 public:
  explicit TransportError(const std::string& what) : Error("TransportError", what) {}
};

struct Message {
  std::uint32_t id = 0;
  std::string type;
  nlohmann::json body = nlohmann::json::object();
};

inline std::string encode(const Message& m) {
  const std::string payload =
      nlohmann::json{{"id", m.id}, {"type", m.type}, {"body", m.body}}.dump(
          -1, ' ', false, nlohmann::json::error_handler_t::replace);
  if (payload.size() > kMaxFrameBytes) throw ProtocolError("frame too large");
  std::string out(4, '\0');
  const auto n = static_cast<std::uint32_t>(payload.size());
  out[0] = static_cast<char>(n >> 24);
  out[1] = static_cast<char>(n >> 16);
  out[2] = static_cast<char>(n >> 8);
  out[3] = static_cast<char>(n);
  return out + payload;
}

inline Message parse(std::string_view payload) {
  nlohmann::json j = nlohmann::json::parse(payload, nullptr, false);
  if (j.is_discarded()) throw ProtocolError("frame is not valid JSON");
  if (!j.is_object()) throw ProtocolError("envelope must be an object");
  Message m;
  if (!j.contains("id") || !j["id"].is_number_unsigned() || j["id"].get<std::uint64_t>() > UINT32_MAX)
    throw ProtocolError("envelope id must be an unsigned 32-bit integer");
  m.id = static_cast<std::uint32_t>(j["id"].get<std::uint64_t>());
  if (!j.contains("type") || !j["type"].is_string()) throw ProtocolError("envelope type must be a string");
  m.type = j["type"].get<std::string>();
  if (j.contains("body")) {
    if (!j["body"].is_object()) throw ProtocolError("envelope body must be an object");
    m.body = std::move(j["body"]);
  }
  return m;
}

inline Message error_message(std::uint32_t id, const std::string& code, const std::string& text) {
  return {id, "error", {{"code", code}, {"message", text}}};
}

// Incremental frame splitter for a byte stream.
class FrameReader {
 public:
  explicit FrameReader(std::size_t max_frame = kMaxFrameBytes) : max_(max_frame) {}

  void feed(const char* data, std::size_t n) { buf_.append(data, n); }

  // Next complete payload; throws ProtocolError on an oversize header.
  std::optional<std::string> next() {
    if (buf_.size() - pos_ < 4) return std::nullopt;
    const auto* p = reinterpret_cast<const unsigned char*>(buf_.data() + pos_);
    const std::uint32_t n = (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) |
                            (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
    if (n > max_) throw ProtocolError("frame length " + std::to_string(n) + " exceeds limit");
    if (buf_.size() - pos_ - 4 < n) return std::nullopt;
    std::string out = buf_.substr(pos_ + 4, n);
    pos_ += 4 + n;
    if (pos_ > 65536 && pos_ * 2 > buf_.size()) {
      buf_.erase(0, pos_);
      pos_ = 0;
    }
    return out;
  }

  std::size_t buffered() const { return buf_.size() - pos_; }

 private:
  std::size_t max_;
  std::string buf_;
  std::size_t pos_ = 0;
};

// ---- sockets ---------------------------------------------------------

struct HostPort {
  std::string host;
  std::string port;
};

inline HostPort split_address(const std::string& addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos || colon + 1 == addr.size())
    throw Error("BadAddress", "address must be host:port, got '" + addr + "'");
  HostPort hp{addr.substr(0, colon), addr.substr(colon + 1)};
  if (hp.host.size() >= 2 && hp.host.front() == '[' && hp.host.back() == ']')
    hp.host = hp.host.substr(1, hp.host.size() - 2);
  if (hp.host.empty()) hp.host = "0.0.0.0";
  return hp;
}

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;
  Fd(Fd&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = o.fd_;
      o.fd_ = -1;
    }
    return *this;
  }
  ~Fd() { reset(); }
  int get() const { return fd_; }
  explicit operator bool() const { return fd_ >= 0; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

inline Fd connect_to(const std::string& addr, std::chrono::milliseconds timeout) {
  const auto hp = split_address(addr);
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (int rc = ::getaddrinfo(hp.host.c_str(), hp.port.c_str(), &hints, &res); rc != 0)
    throw TransportError("cannot resolve " + addr + ": " + ::gai_strerror(rc));
  std::string last = "no addresses";
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    Fd fd(::socket(ai->ai_family, ai->ai_socktype | SOCK_NONBLOCK | SOCK_CLOEXEC, ai->ai_protocol));
    if (!fd) continue;
    int rc = ::connect(fd.get(), ai->ai_addr, ai->ai_addrlen);
    if (rc != 0 && errno == EINPROGRESS) {
      pollfd p{fd.get(), POLLOUT, 0};
      rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
      if (rc == 1) {
        int err = 0;
        socklen_t len = sizeof err;
        ::getsockopt(fd.get(), SOL_SOCKET, SO_ERROR, &err, &len);
        rc = err == 0 ? 0 : -1;
        errno = err;
      } else {
        rc = -1;
        errno = ETIMEDOUT;
      }
    }
    if (rc == 0) {
      int one = 1;
      ::setsockopt(fd.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      ::freeaddrinfo(res);
      return fd;
    }
    last = std::strerror(errno);
  }
  ::freeaddrinfo(res);
  throw TransportError("cannot connect to " + addr + ": " + last);
}

// Writes everything or throws; `timeout` bounds each wait for POLLOUT.
inline void send_all(int fd, std::string_view data, std::chrono::milliseconds timeout) {
  std::size_t off = 0;
  while (off < data.size()) {
    ssize_t n = ::send(fd, data.data() + off, data.size() - off, MSG_NOSIGNAL);
    if (n > 0) {
      off += static_cast<std::size_t>(n);
      continue;
    }
    if (n < 0 && errno == EINTR) continue;
    if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) {
      pollfd p{fd, POLLOUT, 0};
      if (::poll(&p, 1, static_cast<int>(timeout.count())) <= 0)
        throw TransportError("send timed out");
      continue;
    }
    throw TransportError(std::string("send failed: ") + std::strerror(errno));
  }
}

}  // namespace cpfen::proto
