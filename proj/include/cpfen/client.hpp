#pragma once

// Blocking client for the gateway protocol. Notifications (id 0) that
// arrive while waiting for a response are queued for next_notification().

#include <chrono>
#include <deque>
#include <optional>
#include <string>

#include "cpfen/protocol.hpp"

namespace cpfen {

class ServerError : public Error {
 public:
  ServerError(const std::string& code, const std::string& message) : Error(code, message) {}
};

class Client {
 public:
  using ms = std::chrono::milliseconds;

  Client() = default;
  explicit Client(const std::string& addr, ms timeout = ms(5000)) { connect(addr, timeout); }

  void connect(const std::string& addr, ms timeout = ms(5000)) {
    fd_ = proto::connect_to(addr, timeout);
    timeout_ = timeout;
    reader_ = proto::FrameReader();
    pending_.clear();
  }

  bool connected() const { return static_cast<bool>(fd_); }
  void close() { fd_.reset(); }
  void set_timeout(ms t) { timeout_ = t; }

  // Sends a request and returns the response body; an error response throws
  // ServerError with the server's code.
  nlohmann::json request(const std::string& type, nlohmann::json body = nlohmann::json::object()) {
    const std::uint32_t id = next_id_++;
    if (next_id_ == 0) next_id_ = 1;
    send({id, type, std::move(body)});
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    while (true) {
      auto m = receive_until(deadline);
      if (!m) throw proto::TransportError("timed out waiting for '" + type + "' response");
      if (m->id == 0 && m->type != "error") {
        pending_.push_back(std::move(*m));
        continue;
      }
      if (m->type == "error") {
        const auto code = m->body.value("code", std::string("UNKNOWN"));
        const auto text = m->body.value("message", std::string());
        if (m->id == id || m->id == 0) throw ServerError(code, text);
        continue;
      }
      if (m->id != id) continue;
      return std::move(m->body);
    }
  }

  std::optional<proto::Message> next_notification(ms timeout) {
    if (!pending_.empty()) {
      auto m = std::move(pending_.front());
      pending_.pop_front();
      return m;
    }
    return receive_until(std::chrono::steady_clock::now() + timeout);
  }

  // Drops notifications queued while waiting for responses.
  void discard_pending() { pending_.clear(); }

  // ---- raw access, for tests -------------------------------------------

  void send(const proto::Message& m) { send_raw(proto::encode(m)); }
  void send_raw(std::string_view bytes) {
    if (!fd_) throw proto::TransportError("not connected");
    proto::send_all(fd_.get(), bytes, timeout_);
  }

  std::optional<proto::Message> receive(ms timeout) {
    return receive_until(std::chrono::steady_clock::now() + timeout);
  }

  // True once the server has closed its side.
  bool wait_closed(ms timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    try {
      while (receive_until(deadline)) {
      }
    } catch (const proto::TransportError&) {
      return true;
    }
    return false;
  }

 private:
  std::optional<proto::Message> receive_until(std::chrono::steady_clock::time_point deadline) {
    if (!fd_) throw proto::TransportError("not connected");
    char buf[65536];
    while (true) {
      if (auto payload = reader_.next()) return proto::parse(*payload);
      const auto left =
          std::chrono::duration_cast<ms>(deadline - std::chrono::steady_clock::now()).count();
      if (left <= 0) return std::nullopt;
      pollfd p{fd_.get(), POLLIN, 0};
      int rc = ::poll(&p, 1, static_cast<int>(left));
      if (rc < 0 && errno == EINTR) continue;
      if (rc < 0) throw proto::TransportError(std::string("poll failed: ") + std::strerror(errno));
      if (rc == 0) return std::nullopt;
      ssize_t n = ::recv(fd_.get(), buf, sizeof buf, 0);
      if (n == 0) throw proto::TransportError("connection closed by server");
      if (n < 0) {
        if (errno == EINTR || errno == EAGAIN || errno == EWOULDBLOCK) continue;
        throw proto::TransportError(std::string("recv failed: ") + std::strerror(errno));
      }
      reader_.feed(buf, static_cast<std::size_t>(n));
    }
  }

  proto::Fd fd_;
  ms timeout_{5000};
  proto::FrameReader reader_;
  std::deque<proto::Message> pending_;
  std::uint32_t next_id_ = 1;
};

}  // namespace cpfen
