#pragma once

// Binds a topology to a surface: ground-truth poses for every node and
// per-cycle noisy physical readings (central probe plus assigned rods).

#include <map>
#include <random>
#include <string>
#include <vector>

#include "cpfen/process_data.hpp"
#include "cpfen/surface.hpp"
#include "cpfen/topology.hpp"

namespace cpfen {

class Scenario {
 public:
  Scenario(const NetworkTopology& t, SurfaceModel surface, NoiseModel noise)
      : surface_(std::move(surface)), noise_(noise) {
    validate_surface(surface_);
    t.for_each_node([&](const CellConfig&, const MasterConfig&, const SensorNodeConfig& n) {
      poses_[n.node_id] = sample_node_pose(surface_, n.grid_u, n.grid_v);
    });
    t.for_each_node([&](const CellConfig&, const MasterConfig&, const SensorNodeConfig& n) {
      Entry e;
      e.node = n;
      e.pose = poses_.at(n.node_id);
      for (const auto& rod : n.rods) {
        auto it = poses_.find(rod.neighbor_node_id);
        if (it == poses_.end()) throw UnknownNeighbor(rod.neighbor_node_id);
        e.neighbor.push_back(it->second);
        e.rod.push_back(rod_pose(e.pose, it->second));
      }
      e.bias.assign(n.rods.size() + 1, Vec3::Zero());
      e.rng.seed(stream_seed(noise_.seed, n.node_id, 0x5E75));
      entries_.emplace(n.node_id, std::move(e));
    });
  }

  const SurfaceModel& surface() const { return surface_; }
  const NoiseModel& noise() const { return noise_; }
  const NodePose& pose(const std::string& node_id) const { return poses_.at(node_id); }

  // Sensor-side bias fault added to the reading of one accelerometer
  // (index 0 = central probe, i = rod i).
  void inject_accel_bias(const std::string& node_id, int index, const Vec3& bias_g) {
    entries_.at(node_id).bias.at(static_cast<std::size_t>(index)) = bias_g;
  }

  // Next reading of one node; draws from that node's own noise stream.
  PhysicalReading sample(const std::string& node_id) {
    auto& e = entries_.at(node_id);
    const int k = static_cast<int>(e.node.rods.size());
    PhysicalReading r = PhysicalReading::zeros(k);
    r.accel_g[0] = synth_accel(e.pose, noise_, e.rng) + e.bias[0];
    for (int i = 1; i <= k; ++i) {
      r.accel_g[i] = synth_accel(e.rod[i - 1], noise_, e.rng) + e.bias[i];
      r.distance_mm[i - 1] = synth_distance(e.pose, e.neighbor[i - 1], noise_, e.rng);
    }
    return r;
  }

  class UnknownNeighbor : public Error {
   public:
    explicit UnknownNeighbor(const std::string& id)
        : Error("UnknownNeighbor", "rod neighbour '" + id + "' is not in the topology") {}
  };

 private:
  struct Entry {
    SensorNodeConfig node;
    NodePose pose;
    std::vector<NodePose> neighbor;
    std::vector<NodePose> rod;
    std::vector<Vec3> bias;
    std::mt19937_64 rng;
  };

  SurfaceModel surface_;
  NoiseModel noise_;
  std::map<std::string, NodePose> poses_;
  std::map<std::string, Entry> entries_;
};

}  // namespace cpfen
