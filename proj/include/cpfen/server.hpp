#pragma once

// TCP front end of the gateway. Per session: a reader thread that handles
// requests in order, a writer thread draining the outbox, and a publisher
// thread that turns snapshots into change-only notifications.

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "cpfen/gateway.hpp"
#include "cpfen/protocol.hpp"

namespace cpfen {

class BindError : public Error {
 public:
  explicit BindError(const std::string& what) : Error("BindError", what) {}
};

struct ServerOptions {
  std::string listen = "127.0.0.1:0";
  std::size_t max_outbox_bytes = 16u << 20;
  int keepalive_intervals = 10;
  double slow_client_intervals = 2.0;
};

inline nlohmann::json data_value_json(const std::string& node, const DataValue& v) {
  return {{"node", node},
          {"value", variant_to_json(v.value)},
          {"status", to_string(v.status)},
          {"timestamp_ms", v.source_timestamp_ms}};
}

namespace detail {

using Clock = std::chrono::steady_clock;

class Session {
 public:
  Session(std::uint64_t id, proto::Fd fd, Gateway& gw, const ServerOptions& opt)
      : id_(id), fd_(std::move(fd)), gw_(gw), opt_(opt) {}

  ~Session() { join(); }

  void start() {
    consumer_ = gw_.add_consumer();
    reader_ = std::thread([this] { read_loop(); });
    writer_ = std::thread([this] { write_loop(); });
    publisher_ = std::thread([this] { publish_loop(); });
  }

  // Hard stop: wakes every thread; join() afterwards.
  void shutdown() {
    closing_ = true;
    ::shutdown(fd_.get(), SHUT_RDWR);
    out_cv_.notify_all();
    gw_.consumer_progress();
  }

  void join() {
    if (reader_.joinable()) reader_.join();
    if (writer_.joinable()) writer_.join();
    if (publisher_.joinable()) publisher_.join();
    if (consumer_) {
      gw_.remove_consumer(consumer_);
      consumer_.reset();
    }
  }

  bool done() const { return reader_done_ && writer_done_ && publisher_done_; }
  std::uint64_t id() const { return id_; }

 private:
  struct Item {
    std::string node;
    std::size_t index;
    std::optional<DataValue> last_sent;
  };
  struct Subscription {
    std::uint32_t id;
    double interval_ms;
    double next_due_ms;
    int empty_intervals = 0;
    std::vector<Item> items;
  };
  struct OutFrame {
    std::string bytes;
  };

  // ---- outbox ----------------------------------------------------------

  void push(const proto::Message& m) {
    std::string bytes;
    try {
      bytes = proto::encode(m);
    } catch (const proto::ProtocolError&) {
      bytes = proto::encode(proto::error_message(m.id, proto::kBadRequest, "response too large"));
    }
    {
      std::lock_guard lk(out_mu_);
      out_bytes_ += bytes.size();
      outbox_.push_back({std::move(bytes)});
    }
    out_cv_.notify_one();
  }

  void close_after_flush() {
    {
      std::lock_guard lk(out_mu_);
      close_after_flush_ = true;
    }
    out_cv_.notify_one();
  }

  void write_loop() {
    while (true) {
      OutFrame f;
      {
        std::unique_lock lk(out_mu_);
        out_cv_.wait(lk, [&] { return closing_ || !outbox_.empty() || close_after_flush_; });
        if (closing_) break;
        if (outbox_.empty()) {
          if (close_after_flush_) {
            ::shutdown(fd_.get(), SHUT_RDWR);
            break;
          }
          continue;
        }
        f = std::move(outbox_.front());
        outbox_.pop_front();
      }
      if (!send_frame(f.bytes)) break;
      std::lock_guard lk(out_mu_);
      out_bytes_ -= f.bytes.size();
    }
    closing_ = true;
    ::shutdown(fd_.get(), SHUT_RDWR);
    writer_done_ = true;
    gw_.consumer_progress();
  }

  bool send_frame(std::string_view data) {
    std::size_t off = 0;
    while (off < data.size()) {
      if (closing_) return false;
      ssize_t n = ::send(fd_.get(), data.data() + off, data.size() - off, MSG_NOSIGNAL | MSG_DONTWAIT);
      if (n > 0) {
        off += static_cast<std::size_t>(n);
        blocked_since_ns_ = 0;
        continue;
      }
      if (n < 0 && errno == EINTR) continue;
      if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) {
        if (blocked_since_ns_ == 0) blocked_since_ns_ = now_ns();
        pollfd p{fd_.get(), POLLOUT, 0};
        ::poll(&p, 1, 50);
        continue;
      }
      return false;
    }
    return true;
  }

  static std::int64_t now_ns() {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now().time_since_epoch()).count();
  }

  // ---- requests --------------------------------------------------------

  void read_loop() {
    proto::FrameReader reader;
    char buf[65536];
    while (!closing_) {
      pollfd p{fd_.get(), POLLIN, 0};
      int rc = ::poll(&p, 1, 100);
      if (rc < 0 && errno != EINTR) break;
      if (rc <= 0) continue;
      ssize_t n = ::recv(fd_.get(), buf, sizeof buf, 0);
      if (n == 0) break;
      if (n < 0) {
        if (errno == EINTR || errno == EAGAIN) continue;
        break;
      }
      reader.feed(buf, static_cast<std::size_t>(n));
      bool fatal = false;
      while (!fatal) {
        std::optional<std::string> payload;
        proto::Message req;
        try {
          payload = reader.next();
          if (!payload) break;
          req = proto::parse(*payload);
        } catch (const proto::ProtocolError& e) {
          push(proto::error_message(0, proto::kProtocolError, e.what()));
          close_after_flush();
          fatal = true;
          break;
        }
        if (!handle(req)) fatal = true;
      }
      if (fatal) break;
    }
    // Leave the socket to the writer so pending responses still go out.
    close_after_flush();
    reader_done_ = true;
    stop_publishing_ = true;
    gw_.consumer_progress();
  }

  // Returns false when the session should end.
  bool handle(const proto::Message& req) {
    using nlohmann::json;
    const auto& b = req.body;
    auto respond = [&](json body) { push({req.id, req.type, std::move(body)}); };
    auto bad = [&](const std::string& why) {
      push(proto::error_message(req.id, proto::kBadRequest, why));
      return true;
    };
    try {
      if (req.type == "hello") {
        if (!b.contains("protocol_version") || !b["protocol_version"].is_number_integer())
          return bad("hello needs protocol_version");
        const auto v = b["protocol_version"].get<std::int64_t>();
        if (v != proto::kProtocolVersion) {
          push(proto::error_message(req.id, proto::kVersionUnsupported,
                                    "server speaks protocol_version " +
                                        std::to_string(proto::kProtocolVersion)));
          return true;
        }
        respond({{"protocol_version", proto::kProtocolVersion},
                 {"session_id", id_},
                 {"server", "cpfen-gateway"},
                 {"cycle_ms", gw_.min_cycle_ms()}});
        return true;
      }
      if (req.type == "bye") {
        respond(json::object());
        return false;
      }
      if (req.type == "browse") {
        if (!b.contains("node") || !b["node"].is_string()) return bad("browse needs node");
        auto snap = gw_.snapshot();
        auto r = snap->space.browse(b["node"].get<std::string>());
        json refs = json::array();
        for (const auto& ref : r.references) {
          json e = {{"reference_type", to_string(ref.reference_type)},
                    {"node", ref.target.text()},
                    {"browse_name", ref.browse_name},
                    {"node_class", to_string(ref.node_class)}};
          if (ref.type_definition) e["type_definition"] = ref.type_definition->text();
          refs.push_back(std::move(e));
        }
        respond({{"status", to_string(r.status)}, {"references", std::move(refs)}});
        return true;
      }
      if (req.type == "read") {
        if (!b.contains("nodes") || !b["nodes"].is_array()) return bad("read needs nodes[]");
        auto snap = gw_.snapshot();
        json results = json::array();
        for (const auto& n : b["nodes"]) {
          if (!n.is_string()) return bad("node ids must be strings");
          const auto text = n.get<std::string>();
          auto r = snap->space.read_value(text);
          if (r.status == StatusCode::BadNodeIdUnknown || r.status == StatusCode::BadNotReadable) {
            results.push_back({{"node", text}, {"value", nullptr}, {"status", to_string(r.status)},
                               {"timestamp_ms", nullptr}});
          } else {
            results.push_back(data_value_json(text, r.value));
          }
        }
        respond({{"cycle_index", snap->cycle_index}, {"results", std::move(results)}});
        return true;
      }
      if (req.type == "write") {
        if (!b.contains("items") || !b["items"].is_array()) return bad("write needs items[]");
        std::vector<std::pair<std::string, json>> items;
        for (const auto& it : b["items"]) {
          if (!it.is_object() || !it.contains("node") || !it["node"].is_string() || !it.contains("value"))
            return bad("write items need node and value");
          items.emplace_back(it["node"].get<std::string>(), it["value"]);
        }
        auto st = gw_.write(items);
        json results = json::array();
        for (std::size_t i = 0; i < items.size(); ++i)
          results.push_back({{"node", items[i].first}, {"status", to_string(st[i])}});
        respond({{"results", std::move(results)}});
        return true;
      }
      if (req.type == "call") {
        if (!b.contains("object") || !b["object"].is_string() || !b.contains("method") ||
            !b["method"].is_string())
          return bad("call needs object and method");
        auto r = gw_.call(b["object"].get<std::string>(), b["method"].get<std::string>(),
                          b.contains("args") ? b["args"] : json());
        respond({{"status", to_string(r.status)}, {"outputs", r.outputs}});
        return true;
      }
      if (req.type == "subscribe") return subscribe(req);
      if (req.type == "unsubscribe") {
        if (!b.contains("subscription_id") || !b["subscription_id"].is_number_unsigned())
          return bad("unsubscribe needs subscription_id");
        const auto sid = b["subscription_id"].get<std::uint64_t>();
        bool found = false;
        {
          std::lock_guard lk(sub_mu_);
          found = sid <= UINT32_MAX && subs_.erase(static_cast<std::uint32_t>(sid)) > 0;
          consumer_->active = !subs_.empty();
        }
        gw_.consumer_progress();
        respond({{"status", to_string(found ? StatusCode::Good : StatusCode::BadInvalidArgument)}});
        return true;
      }
    } catch (const Error& e) {
      push(proto::error_message(req.id, proto::kBadRequest, e.what()));
      return true;
    } catch (const nlohmann::json::exception& e) {
      push(proto::error_message(req.id, proto::kBadRequest, e.what()));
      return true;
    }
    push(proto::error_message(req.id, proto::kUnsupported, "unknown message type '" + req.type + "'"));
    return true;
  }

  bool subscribe(const proto::Message& req) {
    using nlohmann::json;
    const auto& b = req.body;
    if (!b.contains("nodes") || !b["nodes"].is_array() || !b.contains("interval_ms") ||
        !b["interval_ms"].is_number() || !(b["interval_ms"].get<double>() > 0.0)) {
      push(proto::error_message(req.id, proto::kBadRequest, "subscribe needs nodes[] and interval_ms > 0"));
      return true;
    }
    auto snap = gw_.snapshot();
    Subscription sub;
    const double asked = b["interval_ms"].get<double>();
    double floor_ms = 0.0;
    json results = json::array();
    for (const auto& n : b["nodes"]) {
      if (!n.is_string()) {
        push(proto::error_message(req.id, proto::kBadRequest, "node ids must be strings"));
        return true;
      }
      const auto text = n.get<std::string>();
      auto i = snap->space.find(text);
      StatusCode st = StatusCode::Good;
      if (!i) st = StatusCode::BadNodeIdUnknown;
      else if (snap->space.node(*i).node_class != NodeClass::Variable) st = StatusCode::BadNotReadable;
      results.push_back({{"node", text}, {"status", to_string(st)}});
      if (!is_good(st)) continue;
      sub.items.push_back({text, *i, std::nullopt});
      floor_ms = std::max(floor_ms, gw_.cycle_ms_for(text));
    }
    if (sub.items.empty()) floor_ms = gw_.min_cycle_ms();
    sub.interval_ms = std::max(asked, floor_ms);
    sub.next_due_ms = snap->time_ms + sub.interval_ms;
    json body = {{"interval_ms", sub.interval_ms}, {"results", std::move(results)}};
    if (sub.interval_ms > asked) body["clamped_interval_ms"] = sub.interval_ms;
    {
      std::lock_guard lk(sub_mu_);
      sub.id = next_sub_id_++;
      body["subscription_id"] = sub.id;
      // Respond before the first publish can be queued.
      push({req.id, req.type, std::move(body)});
      subs_.emplace(sub.id, std::move(sub));
      consumer_->seen = std::max<std::uint64_t>(consumer_->seen, snap->cycle_index);
      consumer_->active = true;
    }
    return true;
  }

  // ---- publishing ------------------------------------------------------

  void publish_loop() {
    std::uint64_t seen = gw_.snapshot()->cycle_index;
    while (!closing_ && !stop_publishing_) {
      auto snap = gw_.wait_snapshot(seen, std::chrono::milliseconds(100));
      if (closing_ || stop_publishing_) break;
      if (snap->cycle_index <= seen) continue;
      seen = snap->cycle_index;
      tick(*snap);
      consumer_->seen = seen;
      gw_.consumer_progress();
    }
    consumer_->active = false;
    publisher_done_ = true;
    gw_.consumer_progress();
  }

  void tick(const Snapshot& snap) {
    std::lock_guard lk(sub_mu_);
    for (auto it = subs_.begin(); it != subs_.end();) {
      auto& s = it->second;
      if (snap.time_ms + 1e-9 < s.next_due_ms) {
        ++it;
        continue;
      }
      while (s.next_due_ms <= snap.time_ms + 1e-9) s.next_due_ms += s.interval_ms;
      if (slow(s)) {
        push({0, "subscription_dropped",
              {{"subscription_id", s.id}, {"reason", "slow client"}, {"cycle_index", snap.cycle_index}}});
        it = subs_.erase(it);
        continue;
      }
      nlohmann::json items = nlohmann::json::array();
      for (auto& item : s.items) {
        const DataValue& v = snap.space.value(item.index);
        if (item.last_sent && item.last_sent->value == v.value && item.last_sent->status == v.status)
          continue;
        item.last_sent = v;
        items.push_back(data_value_json(item.node, v));
      }
      const bool keepalive = items.empty() && ++s.empty_intervals >= opt_.keepalive_intervals;
      if (!items.empty() || keepalive) {
        s.empty_intervals = 0;
        push({0, "publish",
              {{"subscription_id", s.id},
               {"cycle_index", snap.cycle_index},
               {"time_ms", snap.time_ms},
               {"keep_alive", keepalive},
               {"items", std::move(items)}}});
      }
      ++it;
    }
    consumer_->active = !subs_.empty();
  }

  bool slow(const Subscription& s) const {
    const std::int64_t since = blocked_since_ns_;
    std::size_t bytes;
    {
      std::lock_guard lk(out_mu_);
      bytes = out_bytes_;
    }
    if (bytes > opt_.max_outbox_bytes) return true;
    if (since == 0 || bytes == 0) return false;
    const double blocked_ms = (now_ns() - since) / 1e6;
    return blocked_ms > opt_.slow_client_intervals * s.interval_ms;
  }

  std::uint64_t id_;
  proto::Fd fd_;
  Gateway& gw_;
  const ServerOptions& opt_;
  std::shared_ptr<SnapshotConsumer> consumer_;

  std::thread reader_, writer_, publisher_;
  std::atomic<bool> closing_{false}, stop_publishing_{false};
  std::atomic<bool> reader_done_{false}, writer_done_{false}, publisher_done_{false};

  mutable std::mutex out_mu_;
  std::condition_variable out_cv_;
  std::deque<OutFrame> outbox_;
  std::size_t out_bytes_ = 0;
  bool close_after_flush_ = false;
  std::atomic<std::int64_t> blocked_since_ns_{0};

  std::mutex sub_mu_;
  std::map<std::uint32_t, Subscription> subs_;
  std::uint32_t next_sub_id_ = 1;
};

}  // namespace detail

class Server {
 public:
  Server(Gateway& gw, ServerOptions opt) : gw_(gw), opt_(std::move(opt)) {}
  ~Server() { stop(); }
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  void start() {
    const auto hp = proto::split_address(opt_.listen);
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE;
    addrinfo* res = nullptr;
    if (int rc = ::getaddrinfo(hp.host.c_str(), hp.port.c_str(), &hints, &res); rc != 0)
      throw BindError("cannot resolve " + opt_.listen + ": " + ::gai_strerror(rc));
    std::string last = "no usable address";
    for (addrinfo* ai = res; ai && !listen_fd_; ai = ai->ai_next) {
      proto::Fd fd(::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol));
      if (!fd) continue;
      int one = 1;
      ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
      if (::bind(fd.get(), ai->ai_addr, ai->ai_addrlen) == 0 && ::listen(fd.get(), 64) == 0) {
        listen_fd_ = std::move(fd);
      } else {
        last = std::strerror(errno);
      }
    }
    ::freeaddrinfo(res);
    if (!listen_fd_) throw BindError("cannot listen on " + opt_.listen + ": " + last);

    sockaddr_storage ss{};
    socklen_t len = sizeof ss;
    ::getsockname(listen_fd_.get(), reinterpret_cast<sockaddr*>(&ss), &len);
    char host[INET6_ADDRSTRLEN] = "?";
    if (ss.ss_family == AF_INET) {
      auto* a = reinterpret_cast<sockaddr_in*>(&ss);
      ::inet_ntop(AF_INET, &a->sin_addr, host, sizeof host);
      port_ = ntohs(a->sin_port);
    } else if (ss.ss_family == AF_INET6) {
      auto* a = reinterpret_cast<sockaddr_in6*>(&ss);
      ::inet_ntop(AF_INET6, &a->sin6_addr, host, sizeof host);
      port_ = ntohs(a->sin6_port);
    }
    host_ = host;
    running_ = true;
    accept_thread_ = std::thread([this] { accept_loop(); });
  }

  std::uint16_t port() const { return port_; }
  std::string address() const {
    return (host_.find(':') != std::string::npos ? "[" + host_ + "]" : host_) + ":" + std::to_string(port_);
  }

  std::size_t session_count() {
    std::lock_guard lk(mu_);
    reap_locked();
    return sessions_.size();
  }

  // Closes the listener and every session socket, then joins all threads.
  void stop() {
    if (!running_.exchange(false)) return;
    if (accept_thread_.joinable()) accept_thread_.join();
    listen_fd_.reset();
    std::list<std::unique_ptr<detail::Session>> all;
    {
      std::lock_guard lk(mu_);
      all.swap(sessions_);
    }
    for (auto& s : all) s->shutdown();
    for (auto& s : all) s->join();
  }

 private:
  void accept_loop() {
    while (running_) {
      pollfd p{listen_fd_.get(), POLLIN, 0};
      int rc = ::poll(&p, 1, 50);
      {
        std::lock_guard lk(mu_);
        reap_locked();
      }
      if (rc <= 0) continue;
      int fd = ::accept4(listen_fd_.get(), nullptr, nullptr, SOCK_CLOEXEC);
      if (fd < 0) continue;
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      auto s = std::make_unique<detail::Session>(next_session_id_++, proto::Fd(fd), gw_, opt_);
      s->start();
      std::lock_guard lk(mu_);
      sessions_.push_back(std::move(s));
    }
  }

  void reap_locked() {
    for (auto it = sessions_.begin(); it != sessions_.end();) {
      if ((*it)->done()) {
        (*it)->join();
        it = sessions_.erase(it);
      } else {
        ++it;
      }
    }
  }

  Gateway& gw_;
  ServerOptions opt_;
  proto::Fd listen_fd_;
  std::uint16_t port_ = 0;
  std::string host_;
  std::atomic<bool> running_{false};
  std::thread accept_thread_;
  std::mutex mu_;
  std::list<std::unique_ptr<detail::Session>> sessions_;
  std::uint64_t next_session_id_ = 1;
};

}  // namespace cpfen
