#pragma once

// Stochastic stand-in for the IO-Link Wireless transport of one W-Master:
// every cycle each node's frame gets up to `subcycles_per_cycle` delivery
// attempts, each failing independently with the node's sub-cycle loss
// probability.

#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cpfen/process_data.hpp"
#include "cpfen/topology.hpp"

namespace cpfen {

enum class PortStatus { Operate, CommWarn, CommLost };

inline const char* to_string(PortStatus s) {
  switch (s) {
    case PortStatus::Operate: return "OPERATE";
    case PortStatus::CommWarn: return "COMM_WARN";
    case PortStatus::CommLost: return "COMM_LOST";
  }
  return "?";
}

struct LinkPolicy {
  std::uint32_t stale_threshold = 3;
  std::uint32_t lost_threshold = 10;
  double rssi_sigma_db = 2.0;

  PortStatus classify(std::uint64_t consecutive_losses) const {
    if (consecutive_losses < stale_threshold) return PortStatus::Operate;
    if (consecutive_losses < lost_threshold) return PortStatus::CommWarn;
    return PortStatus::CommLost;
  }
};

struct LinkState {
  LinkModelParams params;
  std::uint64_t consecutive_losses = 0;
  std::uint64_t total_lost_frames = 0;
  std::uint64_t total_retransmissions = 0;
  std::uint64_t delivered_frames = 0;
  double rssi_dbm = 0.0;
  PortStatus port_status = PortStatus::Operate;
};

struct NodeDiagnostics {
  std::string node_id;
  double rssi_dbm = 0.0;
  std::uint64_t lost_frames = 0;
  std::uint64_t retransmissions = 0;
  std::uint64_t delivered_frames = 0;
  std::uint64_t consecutive_losses = 0;
  PortStatus port_status = PortStatus::Operate;
};

struct FrameDelivery {
  Frame bytes;
  int attempts_used = 1;
  double latency_ms = 0.0;
};

struct NodeDelivery {
  std::string node_id;
  std::optional<FrameDelivery> frame;  // empty: lost this cycle
};

struct CycleOutcome {
  std::string master_id;
  std::uint64_t cycle_index = 0;
  std::vector<NodeDelivery> deliveries;
};

class UnknownNode : public Error {
 public:
  explicit UnknownNode(const std::string& id) : Error("UnknownNode", "unknown node '" + id + "'") {}
};

class MasterSim {
 public:
  MasterSim(MasterConfig config, std::uint64_t seed, LinkPolicy policy = {})
      : config_(std::move(config)), policy_(policy) {
    for (const auto& n : config_.nodes) {
      LinkState s;
      s.params = n.link;
      s.rssi_dbm = n.link.rssi_base_dbm;
      links_.push_back(s);
      rngs_.emplace_back(stream_seed(seed, n.node_id, 0x11A7));
    }
  }

  const MasterConfig& config() const { return config_; }
  const LinkPolicy& policy() const { return policy_; }
  std::uint64_t cycle_index() const { return cycle_index_; }

  // Advances one cycle; `readings` holds one entry per configured node, in
  // configuration order.
  CycleOutcome step_cycle(std::span<const PhysicalReading> readings) {
    if (readings.size() != config_.nodes.size())
      throw ChannelCountMismatch("expected one reading per node");
    CycleOutcome out;
    out.master_id = config_.master_id;
    out.cycle_index = ++cycle_index_;
    out.deliveries.reserve(readings.size());
    const double subcycle_ms = config_.cycle_ms / config_.subcycles_per_cycle;
    for (std::size_t i = 0; i < readings.size(); ++i) {
      const auto& node = config_.nodes[i];
      auto& link = links_[i];
      auto& rng = rngs_[i];
      NodeDelivery d{node.node_id, std::nullopt};

      std::bernoulli_distribution lose(link.params.subcycle_loss_prob);
      int attempt = 1;
      bool delivered = false;
      for (; attempt <= config_.subcycles_per_cycle; ++attempt) {
        if (!lose(rng)) {
          delivered = true;
          break;
        }
      }
      std::normal_distribution<double> jitter(0.0, policy_.rssi_sigma_db);
      link.rssi_dbm = link.params.rssi_base_dbm + jitter(rng);

      if (delivered) {
        link.total_retransmissions += static_cast<std::uint64_t>(attempt - 1);
        link.consecutive_losses = 0;
        ++link.delivered_frames;
        d.frame = FrameDelivery{encode_frame(readings[i], static_cast<int>(node.rods.size())),
                                attempt, attempt * subcycle_ms};
      } else {
        // Every attempt after the first counts as a retransmission, also
        // when the frame is finally lost.
        link.total_retransmissions += static_cast<std::uint64_t>(config_.subcycles_per_cycle - 1);
        ++link.consecutive_losses;
        ++link.total_lost_frames;
      }
      link.port_status = policy_.classify(link.consecutive_losses);
      out.deliveries.push_back(std::move(d));
    }
    return out;
  }

  std::vector<NodeDiagnostics> diagnostics_snapshot() const {
    std::vector<NodeDiagnostics> out;
    out.reserve(links_.size());
    for (std::size_t i = 0; i < links_.size(); ++i) {
      const auto& l = links_[i];
      out.push_back({config_.nodes[i].node_id, l.rssi_dbm, l.total_lost_frames,
                     l.total_retransmissions, l.delivered_frames, l.consecutive_losses,
                     l.port_status});
    }
    return out;
  }

  const LinkState& link(std::string_view node_id) const { return links_[index_of(node_id)]; }

  // Zeroes the cumulative counters. The consecutive-loss run is left alone,
  // so the port status is unchanged.
  void reset_counters(std::string_view node_id) {
    auto& l = links_[index_of(node_id)];
    l.total_lost_frames = 0;
    l.total_retransmissions = 0;
    l.delivered_frames = 0;
    l.port_status = policy_.classify(l.consecutive_losses);
  }

  void set_loss_probability(std::string_view node_id, double p) {
    links_[index_of(node_id)].params.subcycle_loss_prob = p;
  }

  bool has_node(std::string_view node_id) const {
    for (const auto& n : config_.nodes)
      if (n.node_id == node_id) return true;
    return false;
  }

 private:
  std::size_t index_of(std::string_view node_id) const {
    for (std::size_t i = 0; i < config_.nodes.size(); ++i)
      if (config_.nodes[i].node_id == node_id) return i;
    throw UnknownNode(std::string(node_id));
  }

  MasterConfig config_;
  LinkPolicy policy_;
  std::vector<LinkState> links_;
  std::vector<std::mt19937_64> rngs_;
  std::uint64_t cycle_index_ = 0;
};

}  // namespace cpfen
