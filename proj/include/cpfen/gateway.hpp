#pragma once

// Simulation driver behind the server: steps every W-Master at its cycle
// period, feeds the information model and publishes one immutable snapshot
// per step. Writes and method calls are queued and applied at the next
// cycle boundary.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <functional>
#include <future>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "cpfen/address_space.hpp"
#include "cpfen/iolw_sim.hpp"
#include "cpfen/scenario.hpp"
#include "cpfen/topology.hpp"

namespace cpfen {

struct GatewayOptions {
  SurfaceModel surface{FlatSurface{}, 100.0};
  NoiseModel noise;
  std::uint64_t seed = 1;
  bool paced = true;
  std::uint64_t duration_cycles = 0;  // 0 = unbounded
  LinkPolicy policy;
  InformationModel::Options model;
  // unpaced only: longest wait for subscribers to catch up on one snapshot
  std::chrono::milliseconds lockstep_wait{250};
};

struct Snapshot {
  AddressSpace space;
  std::uint64_t cycle_index = 0;
  double time_ms = 0.0;
};

// Someone who must see every snapshot before the unpaced driver moves on.
struct SnapshotConsumer {
  std::atomic<std::uint64_t> seen{0};
  std::atomic<bool> active{false};
};

class Gateway {
 public:
  Gateway(NetworkTopology t, GatewayOptions opt)
      : topo_(std::move(t)),
        opt_(std::move(opt)),
        scene_(topo_, opt_.surface, opt_.noise),
        model_(topo_, opt_.policy, opt_.model) {
    for (const auto& cell : topo_.cells)
      for (const auto& m : cell.masters) {
        Master mm{MasterSim(m, stream_seed(opt_.seed, cell.cell_id + "/" + m.master_id, 0x3A57),
                            opt_.policy),
                  m.cycle_ms, "Cell" + cell.cell_id + "/Master" + m.master_id + "/"};
        for (const auto& n : m.nodes) node_master_[n.node_id] = masters_.size();
        masters_.push_back(std::move(mm));
      }
    publish_locked();
  }

  ~Gateway() { stop(); }
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  const NetworkTopology& topology() const { return topo_; }
  const GatewayOptions& options() const { return opt_; }
  const Scenario& scenario() const { return scene_; }

  double min_cycle_ms() const {
    double c = std::numeric_limits<double>::infinity();
    for (const auto& m : masters_) c = std::min(c, m.cycle_ms);
    return std::isfinite(c) ? c : 5.0;
  }

  // Cycle period of the master a node id text lives under; nodes outside
  // any master (root, cell) get the fastest master.
  double cycle_ms_for(std::string_view node_text) const {
    auto id = NodeId::parse(node_text);
    if (id)
      for (const auto& m : masters_)
        if (id->id.rfind(m.prefix, 0) == 0 || id->id + "/" == m.prefix) return m.cycle_ms;
    return min_cycle_ms();
  }

  std::shared_ptr<const Snapshot> snapshot() const {
    std::lock_guard lk(snap_mu_);
    return snap_;
  }

  // Waits for a snapshot with cycle_index > after (or timeout / stop).
  std::shared_ptr<const Snapshot> wait_snapshot(std::uint64_t after,
                                                std::chrono::milliseconds timeout) const {
    std::unique_lock lk(snap_mu_);
    snap_cv_.wait_for(lk, timeout, [&] { return snap_->cycle_index > after || stopping_; });
    return snap_;
  }

  // ---- driver ----------------------------------------------------------

  void start() {
    if (thread_.joinable()) return;
    stopping_ = false;
    thread_ = std::thread([this] { run(); });
  }

  void stop() {
    {
      std::lock_guard lk(snap_mu_);
      stopping_ = true;
    }
    snap_cv_.notify_all();
    consumer_cv_.notify_all();
    if (thread_.joinable()) thread_.join();
    drain_commands();
  }

  bool running() const { return thread_.joinable() && !stopping_ && !finished_; }
  bool finished() const { return finished_; }
  bool stopping() const { return stopping_; }

  // One driver step in the caller's thread (only without a driver thread).
  void step() { step_once(); }

  std::shared_ptr<SnapshotConsumer> add_consumer() {
    auto c = std::make_shared<SnapshotConsumer>();
    c->seen = snapshot()->cycle_index;
    std::lock_guard lk(consumer_mu_);
    consumers_.push_back(c);
    return c;
  }
  void remove_consumer(const std::shared_ptr<SnapshotConsumer>& c) {
    {
      std::lock_guard lk(consumer_mu_);
      std::erase(consumers_, c);
    }
    consumer_cv_.notify_all();
  }
  void consumer_progress() { consumer_cv_.notify_all(); }

  // ---- queued operations -------------------------------------------------

  // Runs `fn(model)` at the next cycle boundary and waits for the snapshot
  // that includes its effect. Without a running driver it runs inline.
  template <class F>
  auto execute(F fn) -> decltype(fn(std::declval<InformationModel&>())) {
    using R = decltype(fn(std::declval<InformationModel&>()));
    auto applied = std::make_shared<std::uint64_t>(0);
    auto task = std::make_shared<std::packaged_task<R()>>(
        [this, applied, fn = std::move(fn)]() mutable {
          *applied = cycle_ + 1;
          return fn(model_);
        });
    auto fut = task->get_future();
    bool inline_run = false;
    {
      std::lock_guard lk(cmd_mu_);
      if (!thread_.joinable() || stopping_ || finished_) inline_run = true;
      else commands_.push_back([task] { (*task)(); });
    }
    if (inline_run) {
      std::lock_guard lk(model_mu_);
      (*task)();
      publish_locked();
      return fut.get();
    }
    fut.wait();
    std::uint64_t seen = 0;
    while (!stopping_ && !finished_) {
      auto s = wait_snapshot(seen, std::chrono::milliseconds(50));
      if (s->cycle_index >= *applied) break;
      seen = s->cycle_index;
    }
    return fut.get();
  }

  std::vector<StatusCode> write(const std::vector<std::pair<std::string, nlohmann::json>>& items) {
    return execute([&items](InformationModel& m) {
      std::vector<StatusCode> out;
      for (const auto& [node, value] : items) {
        auto i = m.space().find(node);
        if (!i) {
          out.push_back(StatusCode::BadNodeIdUnknown);
          continue;
        }
        const auto& n = m.space().node(*i);
        if (n.node_class != NodeClass::Variable || !n.data_type) {
          out.push_back(StatusCode::BadNotWritable);
          continue;
        }
        auto v = variant_from_json(value, *n.data_type);
        if (!v) {
          // Read-only targets report that first.
          out.push_back(n.access == AccessLevel::ReadWrite ? StatusCode::BadTypeMismatch
                                                           : StatusCode::BadNotWritable);
          continue;
        }
        out.push_back(m.write_value(node, *v));
      }
      return out;
    });
  }

  CallResult call(const std::string& object, const std::string& method, const nlohmann::json& args) {
    return execute([&](InformationModel& m) {
      return m.call_method(object, method, args, [this](const std::string& node_id) {
        auto& sim = masters_.at(node_master_.at(node_id)).sim;
        sim.reset_counters(node_id);
        for (const auto& d : sim.diagnostics_snapshot())
          if (d.node_id == node_id) return d;
        throw UnknownNode(node_id);
      });
    });
  }

  // Fault injection, applied at the next cycle boundary.
  void set_loss_probability(const std::string& node_id, double p) {
    execute([&](InformationModel&) {
      masters_.at(node_master_.at(node_id)).sim.set_loss_probability(node_id, p);
      return 0;
    });
  }
  void inject_accel_bias(const std::string& node_id, int index, const Vec3& bias) {
    execute([&](InformationModel&) {
      scene_.inject_accel_bias(node_id, index, bias);
      return 0;
    });
  }

  std::vector<NodeDiagnostics> diagnostics(const std::string& master_id) const {
    std::lock_guard lk(model_mu_);
    for (const auto& m : masters_)
      if (m.sim.config().master_id == master_id) return m.sim.diagnostics_snapshot();
    return {};
  }

 private:
  struct Master {
    MasterSim sim;
    double cycle_ms;
    std::string prefix;  // "Cell<c>/Master<m>/"
    double next_due = 0.0;
  };

  void run() {
    const auto t0 = std::chrono::steady_clock::now();
    while (!stopping_) {
      if (opt_.paced) {
        double due = std::numeric_limits<double>::infinity();
        for (const auto& m : masters_) due = std::min(due, m.next_due + m.cycle_ms);
        if (!std::isfinite(due)) due = time_ms_ + 5.0;
        const auto wake = t0 + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                   std::chrono::duration<double, std::milli>(due));
        std::unique_lock lk(snap_mu_);
        if (snap_cv_.wait_until(lk, wake, [&] { return stopping_.load(); })) break;
      }
      step_once();
      if (opt_.duration_cycles && cycle_ >= opt_.duration_cycles) {
        finished_ = true;
        snap_cv_.notify_all();
        break;
      }
      if (!opt_.paced) wait_for_consumers();
    }
    drain_commands();
  }

  void wait_for_consumers() {
    std::unique_lock lk(consumer_mu_);
    consumer_cv_.wait_for(lk, opt_.lockstep_wait, [&] {
      if (stopping_) return true;
      for (const auto& c : consumers_)
        if (c->active && c->seen < cycle_) return false;
      return true;
    });
  }

  void drain_commands() {
    std::vector<std::function<void()>> cmds;
    {
      std::lock_guard lk(cmd_mu_);
      cmds.swap(commands_);
    }
    if (cmds.empty()) return;
    std::lock_guard lk(model_mu_);
    for (auto& c : cmds) c();
    publish_locked();
  }

  void step_once() {
    std::vector<std::function<void()>> cmds;
    {
      std::lock_guard lk(cmd_mu_);
      cmds.swap(commands_);
    }
    std::lock_guard lk(model_mu_);
    for (auto& c : cmds) c();

    double due = std::numeric_limits<double>::infinity();
    for (const auto& m : masters_) due = std::min(due, m.next_due + m.cycle_ms);
    if (!std::isfinite(due)) due = time_ms_ + 5.0;
    ++cycle_;
    time_ms_ = due;
    model_.set_clock(cycle_, time_ms_);
    for (auto& m : masters_) {
      if (m.next_due + m.cycle_ms > due + 1e-9) continue;
      m.next_due += m.cycle_ms;
      std::vector<PhysicalReading> readings;
      readings.reserve(m.sim.config().nodes.size());
      for (const auto& n : m.sim.config().nodes) readings.push_back(scene_.sample(n.node_id));
      auto out = m.sim.step_cycle(readings);
      model_.ingest(out, m.sim.diagnostics_snapshot(), time_ms_);
    }
    publish_locked();
  }

  void publish_locked() {
    auto s = std::make_shared<Snapshot>(Snapshot{model_.snapshot(), cycle_, time_ms_});
    {
      std::lock_guard lk(snap_mu_);
      snap_ = std::move(s);
    }
    snap_cv_.notify_all();
  }

  NetworkTopology topo_;
  GatewayOptions opt_;
  Scenario scene_;
  InformationModel model_;
  std::vector<Master> masters_;
  std::map<std::string, std::size_t> node_master_;

  mutable std::mutex model_mu_;
  std::uint64_t cycle_ = 0;
  double time_ms_ = 0.0;

  mutable std::mutex snap_mu_;
  mutable std::condition_variable snap_cv_;
  std::shared_ptr<const Snapshot> snap_;

  std::mutex cmd_mu_;
  std::vector<std::function<void()>> commands_;

  std::mutex consumer_mu_;
  std::condition_variable consumer_cv_;
  std::vector<std::shared_ptr<SnapshotConsumer>> consumers_;

  std::thread thread_;
  std::atomic<bool> stopping_{false};
  std::atomic<bool> finished_{false};
};

}  // namespace cpfen
