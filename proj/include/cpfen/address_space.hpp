#pragma once

// Information model of the sensor network: a typed graph of objects,
// variables and methods built from the topology, plus the runtime that
// feeds it with decoded process data, diagnostics and calibration.

#include <algorithm>
#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpfen/iolw_sim.hpp"
#include "cpfen/process_data.hpp"
#include "cpfen/topology.hpp"

namespace cpfen {

inline constexpr int kTypeNamespace = 1;
inline constexpr int kInstanceNamespace = 2;

struct NodeId {
  int ns = kInstanceNamespace;
  std::string id;

  std::string text() const { return "ns=" + std::to_string(ns) + ";s=" + id; }

  static std::optional<NodeId> parse(std::string_view s) {
    if (s.substr(0, 3) != "ns=") return std::nullopt;
    auto semi = s.find(';');
    if (semi == std::string_view::npos || s.substr(semi, 3) != ";s=") return std::nullopt;
    int ns = 0;
    for (char c : s.substr(3, semi - 3)) {
      if (c < '0' || c > '9') return std::nullopt;
      ns = ns * 10 + (c - '0');
      if (ns > 65535) return std::nullopt;
    }
    if (semi == 3) return std::nullopt;
    std::string id(s.substr(semi + 3));
    if (id.empty()) return std::nullopt;
    return NodeId{ns, std::move(id)};
  }
  bool operator==(const NodeId&) const = default;
};

inline NodeId instance_id(std::string path) { return {kInstanceNamespace, std::move(path)}; }
inline NodeId type_id(std::string name) { return {kTypeNamespace, std::move(name)}; }

enum class NodeClass { Object, Variable, Method, ObjectType, VariableType };
enum class DataType { Float32, Float32Vec3, UInt32, Int32, Enum, String, Boolean };
enum class AccessLevel { ReadOnly, ReadWrite };
enum class ReferenceType { Organizes, HasComponent, HasTypeDefinition };

enum class StatusCode {
  Good,
  UncertainLastUsableValue,
  BadWaitingForInitialData,
  BadCommLost,
  BadNodeIdUnknown,
  BadNotReadable,
  BadNotWritable,
  BadTypeMismatch,
  BadOutOfRange,
  BadMethodInvalid,
  BadPreconditionNotMet,
  BadInvalidArgument,
};

inline const char* to_string(NodeClass c) {
  switch (c) {
    case NodeClass::Object: return "Object";
    case NodeClass::Variable: return "Variable";
    case NodeClass::Method: return "Method";
    case NodeClass::ObjectType: return "ObjectType";
    case NodeClass::VariableType: return "VariableType";
  }
  return "?";
}

inline const char* to_string(DataType t) {
  switch (t) {
    case DataType::Float32: return "Float32";
    case DataType::Float32Vec3: return "Float32Vec3";
    case DataType::UInt32: return "UInt32";
    case DataType::Int32: return "Int32";
    case DataType::Enum: return "Enum";
    case DataType::String: return "String";
    case DataType::Boolean: return "Boolean";
  }
  return "?";
}

inline const char* to_string(AccessLevel a) {
  return a == AccessLevel::ReadWrite ? "ReadWrite" : "ReadOnly";
}

inline const char* to_string(ReferenceType r) {
  switch (r) {
    case ReferenceType::Organizes: return "Organizes";
    case ReferenceType::HasComponent: return "HasComponent";
    case ReferenceType::HasTypeDefinition: return "HasTypeDefinition";
  }
  return "?";
}

inline const char* to_string(StatusCode s) {
  switch (s) {
    case StatusCode::Good: return "Good";
    case StatusCode::UncertainLastUsableValue: return "UncertainLastUsableValue";
    case StatusCode::BadWaitingForInitialData: return "BadWaitingForInitialData";
    case StatusCode::BadCommLost: return "BadCommLost";
    case StatusCode::BadNodeIdUnknown: return "BadNodeIdUnknown";
    case StatusCode::BadNotReadable: return "BadNotReadable";
    case StatusCode::BadNotWritable: return "BadNotWritable";
    case StatusCode::BadTypeMismatch: return "BadTypeMismatch";
    case StatusCode::BadOutOfRange: return "BadOutOfRange";
    case StatusCode::BadMethodInvalid: return "BadMethodInvalid";
    case StatusCode::BadPreconditionNotMet: return "BadPreconditionNotMet";
    case StatusCode::BadInvalidArgument: return "BadInvalidArgument";
  }
  return "?";
}

inline std::optional<StatusCode> status_from_string(std::string_view s) {
  for (int i = 0; i <= static_cast<int>(StatusCode::BadInvalidArgument); ++i) {
    auto c = static_cast<StatusCode>(i);
    if (s == to_string(c)) return c;
  }
  return std::nullopt;
}

inline bool is_good(StatusCode s) { return s == StatusCode::Good; }
inline bool is_bad(StatusCode s) { return to_string(s)[0] == 'B'; }

struct EnumValue {
  std::int32_t code = 0;
  std::string name;
  bool operator==(const EnumValue&) const = default;
};

using Vec3Value = std::array<double, 3>;
using Variant = std::variant<std::monostate, bool, std::int32_t, std::uint32_t, double, Vec3Value,
                             std::string, EnumValue>;

inline double to_float32(double x) { return static_cast<double>(static_cast<float>(x)); }
inline Vec3Value to_vec3_value(const Vec3& v) {
  return {to_float32(v[0]), to_float32(v[1]), to_float32(v[2])};
}
inline Vec3 to_vec3(const Vec3Value& v) { return {v[0], v[1], v[2]}; }

struct DataValue {
  Variant value;
  StatusCode status = StatusCode::BadWaitingForInitialData;
  double source_timestamp_ms = 0.0;
  bool operator==(const DataValue&) const = default;
};

struct ModelNode {
  NodeId node_id;
  NodeClass node_class = NodeClass::Object;
  std::string browse_name;
  std::optional<NodeId> type_definition;
  std::optional<DataType> data_type;
  AccessLevel access = AccessLevel::ReadOnly;
};

struct Reference {
  ReferenceType type;
  std::size_t target;
};

struct ReferenceDescription {
  ReferenceType reference_type;
  NodeId target;
  std::string browse_name;
  NodeClass node_class;
  std::optional<NodeId> type_definition;
};

struct BrowseResult {
  StatusCode status = StatusCode::Good;
  std::vector<ReferenceDescription> references;
};

struct ReadResult {
  StatusCode status = StatusCode::Good;  // Bad* here means the read itself failed
  DataValue value;
};

// Graph structure, immutable once built and shared between snapshots.
struct ModelStructure {
  std::vector<ModelNode> nodes;
  std::vector<std::vector<Reference>> forward;
  std::unordered_map<std::string, std::size_t> index;

  std::optional<std::size_t> find(std::string_view text) const {
    auto it = index.find(std::string(text));
    if (it == index.end()) return std::nullopt;
    return it->second;
  }

  std::size_t add(ModelNode n) {
    const std::size_t i = nodes.size();
    if (!index.emplace(n.node_id.text(), i).second)
      throw Error("DuplicateNodeId", "duplicate node id " + n.node_id.text());
    nodes.push_back(std::move(n));
    forward.emplace_back();
    return i;
  }

  void link(std::size_t from, ReferenceType type, std::size_t to) {
    forward[from].push_back({type, to});
  }
};

// Structure plus the current value of every variable. Copying an
// AddressSpace shares the structure and copies only the values, which is how
// per-cycle snapshots are taken.
class AddressSpace {
 public:
  AddressSpace() : structure_(std::make_shared<ModelStructure>()) {}
  explicit AddressSpace(std::shared_ptr<const ModelStructure> s)
      : structure_(std::move(s)), values_(structure_->nodes.size()) {}

  const ModelStructure& structure() const { return *structure_; }
  std::size_t size() const { return structure_->nodes.size(); }
  const ModelNode& node(std::size_t i) const { return structure_->nodes[i]; }
  std::optional<std::size_t> find(std::string_view text) const { return structure_->find(text); }

  const DataValue& value(std::size_t i) const { return values_[i]; }
  void set_value(std::size_t i, DataValue v) { values_[i] = std::move(v); }
  void set_status(std::size_t i, StatusCode s) { values_[i].status = s; }

  std::uint64_t cycle_index() const { return cycle_index_; }
  double time_ms() const { return time_ms_; }
  void set_clock(std::uint64_t cycle, double time_ms) {
    cycle_index_ = cycle;
    time_ms_ = time_ms;
  }

  // Forward hierarchical references, sorted by browse name.
  BrowseResult browse(std::string_view node_text) const {
    BrowseResult r;
    auto i = find(node_text);
    if (!i) {
      r.status = StatusCode::BadNodeIdUnknown;
      return r;
    }
    for (const auto& ref : structure_->forward[*i]) {
      if (ref.type == ReferenceType::HasTypeDefinition) continue;
      const auto& t = node(ref.target);
      r.references.push_back({ref.type, t.node_id, t.browse_name, t.node_class, t.type_definition});
    }
    std::sort(r.references.begin(), r.references.end(),
              [](const ReferenceDescription& a, const ReferenceDescription& b) {
                return a.browse_name < b.browse_name;
              });
    return r;
  }

  ReadResult read_value(std::string_view node_text) const {
    ReadResult r;
    auto i = find(node_text);
    if (!i) {
      r.status = StatusCode::BadNodeIdUnknown;
      return r;
    }
    if (node(*i).node_class != NodeClass::Variable) {
      r.status = StatusCode::BadNotReadable;
      return r;
    }
    r.value = values_[*i];
    r.status = r.value.status;
    return r;
  }

 private:
  std::shared_ptr<const ModelStructure> structure_;
  std::vector<DataValue> values_;
  std::uint64_t cycle_index_ = 0;
  double time_ms_ = 0.0;
};

inline bool variant_matches(const Variant& v, DataType t) {
  switch (t) {
    case DataType::Float32: return std::holds_alternative<double>(v);
    case DataType::Float32Vec3: return std::holds_alternative<Vec3Value>(v);
    case DataType::UInt32: return std::holds_alternative<std::uint32_t>(v);
    case DataType::Int32: return std::holds_alternative<std::int32_t>(v);
    case DataType::Enum: return std::holds_alternative<EnumValue>(v);
    case DataType::String: return std::holds_alternative<std::string>(v);
    case DataType::Boolean: return std::holds_alternative<bool>(v);
  }
  return false;
}

inline nlohmann::json variant_to_json(const Variant& v) {
  return std::visit(
      [](const auto& x) -> nlohmann::json {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, std::monostate>) return nullptr;
        else if constexpr (std::is_same_v<T, Vec3Value>) return nlohmann::json::array({x[0], x[1], x[2]});
        else if constexpr (std::is_same_v<T, EnumValue>) return x.name;
        else return x;
      },
      v);
}

// Interprets a JSON value as the given data type; nullopt on mismatch.
inline std::optional<Variant> variant_from_json(const nlohmann::json& j, DataType t) {
  switch (t) {
    case DataType::Float32:
      if (j.is_number()) return Variant{j.get<double>()};
      break;
    case DataType::Float32Vec3:
      if (j.is_array() && j.size() == 3 && j[0].is_number() && j[1].is_number() && j[2].is_number())
        return Variant{Vec3Value{j[0].get<double>(), j[1].get<double>(), j[2].get<double>()}};
      break;
    case DataType::UInt32:
      if (j.is_number_unsigned() && j.get<std::uint64_t>() <= UINT32_MAX)
        return Variant{static_cast<std::uint32_t>(j.get<std::uint64_t>())};
      break;
    case DataType::Int32:
      if (j.is_number_integer()) {
        auto x = j.get<std::int64_t>();
        if (x >= INT32_MIN && x <= INT32_MAX) return Variant{static_cast<std::int32_t>(x)};
      }
      break;
    case DataType::Enum:
      if (j.is_string()) return Variant{EnumValue{0, j.get<std::string>()}};
      break;
    case DataType::String:
      if (j.is_string()) return Variant{j.get<std::string>()};
      break;
    case DataType::Boolean:
      if (j.is_boolean()) return Variant{j.get<bool>()};
      break;
  }
  return std::nullopt;
}

// Full graph dump (structure only), deterministic: nodes sorted by node id
// text, references in creation order per source.
inline nlohmann::json dump_model(const AddressSpace& space) {
  using nlohmann::json;
  std::vector<std::size_t> order(space.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return space.node(a).node_id.text() < space.node(b).node_id.text();
  });
  json nodes = json::array();
  json refs = json::array();
  for (std::size_t i : order) {
    const auto& n = space.node(i);
    json e = {{"node_id", n.node_id.text()},
              {"node_class", to_string(n.node_class)},
              {"browse_name", n.browse_name}};
    if (n.type_definition) e["type_definition"] = n.type_definition->text();
    if (n.data_type) {
      e["data_type"] = to_string(*n.data_type);
      e["access"] = to_string(n.access);
    }
    nodes.push_back(std::move(e));
    for (const auto& r : space.structure().forward[i])
      refs.push_back({{"source", n.node_id.text()},
                      {"type", to_string(r.type)},
                      {"target", space.node(r.target).node_id.text()}});
  }
  return json{{"nodes", std::move(nodes)}, {"references", std::move(refs)}};
}

struct CalibrationParams {
  std::vector<Vec3> accel_bias;        // k+1, g
  std::vector<Vec3> accel_scale;       // k+1, unitless
  std::vector<double> distance_offset_mm;  // k

  static CalibrationParams identity(int k) {
    return {std::vector<Vec3>(k + 1, Vec3::Zero()), std::vector<Vec3>(k + 1, Vec3::Ones()),
            std::vector<double>(k, 0.0)};
  }

  PhysicalReading apply(const PhysicalReading& raw) const {
    PhysicalReading out = raw;
    for (std::size_t i = 0; i < raw.accel_g.size(); ++i)
      out.accel_g[i] = raw.accel_g[i].cwiseProduct(accel_scale[i]) - accel_bias[i];
    for (std::size_t i = 0; i < raw.distance_mm.size(); ++i)
      out.distance_mm[i] = raw.distance_mm[i] + distance_offset_mm[i];
    return out;
  }
};

inline constexpr double kMinAccelScale = 0.5;
inline constexpr double kMaxAccelScale = 2.0;

class TopologyInvalid : public Error {
 public:
  explicit TopologyInvalid(const std::string& what) : Error("TopologyInvalid", what) {}
};

struct CallResult {
  StatusCode status = StatusCode::Good;
  nlohmann::json outputs = nlohmann::json::object();
};

// Live information model. Owns the address space, maps cycle outcomes into
// variable values, validates writes and executes the node methods.
class InformationModel {
 public:
  struct Options {
    std::size_t calibration_window = 16;
  };

  InformationModel(const NetworkTopology& t, LinkPolicy policy, Options opts)
      : policy_(policy), options_(opts) {
    if (auto vs = validate_topology(t); has_errors(vs))
      throw TopologyInvalid("topology has " + std::to_string(vs.size()) + " violation(s), first: " +
                            vs.front().code + " at " + vs.front().path);
    build(t);
  }
  explicit InformationModel(const NetworkTopology& t, LinkPolicy policy = {})
      : InformationModel(t, policy, Options{}) {}

  const AddressSpace& space() const { return space_; }
  AddressSpace snapshot() const { return space_; }
  const Options& options() const { return options_; }

  struct NodeBinding {
    std::string node_id;
    std::string master_id;
    int k = 0;
    std::size_t object = 0;
    std::vector<std::size_t> accel, distance, bias, scale, offset;
    std::size_t rssi = 0, lost = 0, retx = 0, port = 0;
    std::size_t calibrate = 0, reset = 0;
    std::vector<double> nominal_length_mm;
    CalibrationParams calibration;
    std::deque<PhysicalReading> raw_window;
  };

  const NodeBinding* binding(std::string_view node_id) const {
    auto it = by_node_id_.find(std::string(node_id));
    return it == by_node_id_.end() ? nullptr : &nodes_[it->second];
  }
  const NodeBinding* binding_for_object(std::string_view object_text) const {
    auto i = space_.find(object_text);
    if (!i) return nullptr;
    auto it = by_object_.find(*i);
    return it == by_object_.end() ? nullptr : &nodes_[it->second];
  }
  const std::vector<NodeBinding>& bindings() const { return nodes_; }

  // Applies one master's cycle: delivered frames become Good calibrated
  // values, lost frames downgrade the retained values according to the
  // port status, diagnostics are refreshed.
  void ingest(const CycleOutcome& outcome, const std::vector<NodeDiagnostics>& diagnostics,
              double time_ms) {
    std::map<std::string, const NodeDiagnostics*> diag;
    for (const auto& d : diagnostics) diag[d.node_id] = &d;
    for (const auto& d : outcome.deliveries) {
      auto& b = nodes_[by_node_id_.at(d.node_id)];
      const NodeDiagnostics* nd = diag.count(d.node_id) ? diag[d.node_id] : nullptr;
      const PortStatus port = nd ? nd->port_status : PortStatus::Operate;
      if (d.frame) {
        PhysicalReading raw = decode_frame(d.frame->bytes, b.k);
        b.raw_window.push_back(raw);
        while (b.raw_window.size() > options_.calibration_window) b.raw_window.pop_front();
        publish_reading(b, raw, time_ms);
      } else {
        const StatusCode s = port == PortStatus::Operate      ? StatusCode::Good
                             : port == PortStatus::CommWarn   ? StatusCode::UncertainLastUsableValue
                                                              : StatusCode::BadCommLost;
        for (auto idx : b.accel) downgrade(idx, s);
        for (auto idx : b.distance) downgrade(idx, s);
      }
      if (nd) {
        set_diag(b.rssi, Variant{to_float32(nd->rssi_dbm)}, time_ms);
        set_diag(b.lost, Variant{static_cast<std::uint32_t>(nd->lost_frames)}, time_ms);
        set_diag(b.retx, Variant{static_cast<std::uint32_t>(nd->retransmissions)}, time_ms);
        set_diag(b.port, Variant{EnumValue{static_cast<std::int32_t>(nd->port_status),
                                           to_string(nd->port_status)}},
                 time_ms);
      }
    }
    auto mit = masters_.find(outcome.master_id);
    if (mit != masters_.end()) {
      std::uint32_t connected = 0;
      for (const auto& d : diagnostics) connected += d.port_status != PortStatus::CommLost;
      mit->second.cycle_index = outcome.cycle_index;
      mit->second.connected = connected;
      set_diag(mit->second.cycle_var, Variant{static_cast<std::uint32_t>(outcome.cycle_index)},
               time_ms);
      set_diag(mit->second.connected_var, Variant{connected}, time_ms);
      auto& cell = cells_.at(mit->second.cell_id);
      std::uint64_t max_cycle = 0;
      std::uint32_t total = 0;
      for (const auto& mid : cell.masters) {
        max_cycle = std::max(max_cycle, masters_.at(mid).cycle_index);
        total += masters_.at(mid).connected;
      }
      set_diag(cell.cycle_var, Variant{static_cast<std::uint32_t>(max_cycle)}, time_ms);
      set_diag(cell.connected_var, Variant{total}, time_ms);
    }
  }

  void set_clock(std::uint64_t cycle, double time_ms) { space_.set_clock(cycle, time_ms); }

  // Diagnostic-only refresh used after ResetCounters.
  void refresh_diagnostics(const NodeDiagnostics& nd) {
    auto& b = nodes_[by_node_id_.at(nd.node_id)];
    const double t = space_.time_ms();
    set_diag(b.lost, Variant{static_cast<std::uint32_t>(nd.lost_frames)}, t);
    set_diag(b.retx, Variant{static_cast<std::uint32_t>(nd.retransmissions)}, t);
    set_diag(b.port, Variant{EnumValue{static_cast<std::int32_t>(nd.port_status),
                                       to_string(nd.port_status)}},
             t);
  }

  // Validation half of a write, without side effects.
  StatusCode check_write(std::string_view node_text, const Variant& value) const {
    auto i = space_.find(node_text);
    if (!i) return StatusCode::BadNodeIdUnknown;
    const auto& n = space_.node(*i);
    if (n.node_class != NodeClass::Variable || n.access != AccessLevel::ReadWrite)
      return StatusCode::BadNotWritable;
    if (!variant_matches(value, *n.data_type)) return StatusCode::BadTypeMismatch;
    auto it = calib_targets_.find(*i);
    if (it == calib_targets_.end()) return StatusCode::BadNotWritable;
    if (it->second.kind == CalibKind::Scale) {
      for (double c : std::get<Vec3Value>(value))
        if (!(c >= kMinAccelScale && c <= kMaxAccelScale)) return StatusCode::BadOutOfRange;
    } else if (it->second.kind == CalibKind::Bias) {
      for (double c : std::get<Vec3Value>(value))
        if (!std::isfinite(c)) return StatusCode::BadOutOfRange;
    } else if (!std::isfinite(std::get<double>(value))) {
      return StatusCode::BadOutOfRange;
    }
    return StatusCode::Good;
  }

  StatusCode write_value(std::string_view node_text, const Variant& value) {
    const StatusCode s = check_write(node_text, value);
    if (!is_good(s)) return s;
    const std::size_t i = *space_.find(node_text);
    const auto& target = calib_targets_.at(i);
    auto& b = nodes_[target.binding];
    switch (target.kind) {
      case CalibKind::Bias:
        b.calibration.accel_bias[target.channel] = to_vec3(std::get<Vec3Value>(value));
        break;
      case CalibKind::Scale:
        b.calibration.accel_scale[target.channel] = to_vec3(std::get<Vec3Value>(value));
        break;
      case CalibKind::Offset:
        b.calibration.distance_offset_mm[target.channel] = std::get<double>(value);
        break;
    }
    publish_calibration(b);
    return StatusCode::Good;
  }

  // Calibrate(reference = "flat-static") and ResetCounters. `reset_link` is
  // invoked with the node id and returns the refreshed diagnostics.
  CallResult call_method(std::string_view object_text, std::string_view method,
                         const nlohmann::json& args,
                         const std::function<NodeDiagnostics(const std::string&)>& reset_link) {
    CallResult r;
    auto oi = space_.find(object_text);
    if (!oi) {
      r.status = StatusCode::BadNodeIdUnknown;
      return r;
    }
    auto bit = by_object_.find(*oi);
    if (bit == by_object_.end()) {
      r.status = StatusCode::BadMethodInvalid;
      return r;
    }
    auto& b = nodes_[bit->second];
    std::string name(method);
    if (auto mi = space_.find(method)) {
      name = *mi == b.calibrate ? "Calibrate" : *mi == b.reset ? "ResetCounters" : "";
    }
    if (name == "Calibrate") return calibrate(b, args);
    if (name == "ResetCounters") {
      if (!args.is_null() && !(args.is_object() && args.empty()) &&
          !(args.is_array() && args.empty())) {
        r.status = StatusCode::BadInvalidArgument;
        return r;
      }
      refresh_diagnostics(reset_link(b.node_id));
      return r;
    }
    r.status = StatusCode::BadMethodInvalid;
    return r;
  }

 private:
  enum class CalibKind { Bias, Scale, Offset };
  struct CalibTarget {
    std::size_t binding;
    CalibKind kind;
    std::size_t channel;
  };
  struct MasterBinding {
    std::string cell_id;
    std::size_t cycle_var = 0, connected_var = 0;
    std::uint64_t cycle_index = 0;
    std::uint32_t connected = 0;
  };
  struct CellBinding {
    std::vector<std::string> masters;
    std::size_t cycle_var = 0, connected_var = 0;
  };

  CallResult calibrate(NodeBinding& b, const nlohmann::json& args) {
    CallResult r;
    std::string reference = "flat-static";
    if (args.is_object() && args.contains("reference")) {
      if (!args["reference"].is_string()) {
        r.status = StatusCode::BadInvalidArgument;
        return r;
      }
      reference = args["reference"].get<std::string>();
    } else if (!args.is_null() && !(args.is_object() && args.empty())) {
      r.status = StatusCode::BadInvalidArgument;
      return r;
    }
    if (reference != "flat-static") {
      r.status = StatusCode::BadInvalidArgument;
      return r;
    }
    const std::size_t w = options_.calibration_window;
    if (b.raw_window.size() < w) {
      r.status = StatusCode::BadPreconditionNotMet;
      return r;
    }
    std::vector<Vec3> accel_sum(b.k + 1, Vec3::Zero());
    std::vector<double> dist_sum(b.k, 0.0);
    for (const auto& raw : b.raw_window) {
      for (int i = 0; i <= b.k; ++i) {
        if (!raw.valid[i]) {
          r.status = StatusCode::BadPreconditionNotMet;
          return r;
        }
        accel_sum[i] += raw.accel_g[i];
        if (i > 0) dist_sum[i - 1] += raw.distance_mm[i - 1];
      }
    }
    nlohmann::json biases = nlohmann::json::array(), offsets = nlohmann::json::array();
    for (int i = 0; i <= b.k; ++i) {
      const Vec3 mean = accel_sum[i] / static_cast<double>(w);
      b.calibration.accel_bias[i] = mean.cwiseProduct(b.calibration.accel_scale[i]) - Vec3::UnitZ();
      const auto v = to_vec3_value(b.calibration.accel_bias[i]);
      biases.push_back({v[0], v[1], v[2]});
    }
    for (int i = 0; i < b.k; ++i) {
      const double mean = dist_sum[i] / static_cast<double>(w);
      b.calibration.distance_offset_mm[i] = b.nominal_length_mm[i] - mean;
      offsets.push_back(to_float32(b.calibration.distance_offset_mm[i]));
    }
    publish_calibration(b);
    r.outputs = {{"accel_bias", std::move(biases)}, {"distance_offset_mm", std::move(offsets)}};
    return r;
  }

  void publish_reading(NodeBinding& b, const PhysicalReading& raw, double time_ms) {
    const PhysicalReading cal = b.calibration.apply(raw);
    for (int i = 0; i <= b.k; ++i) {
      const bool ok = raw.valid[i];
      publish_channel(b.accel[i], Variant{to_vec3_value(cal.accel_g[i])}, ok, time_ms);
      if (i > 0)
        publish_channel(b.distance[i - 1], Variant{to_float32(cal.distance_mm[i - 1])}, ok, time_ms);
    }
  }

  void publish_channel(std::size_t idx, Variant v, bool valid, double time_ms) {
    if (valid) {
      space_.set_value(idx, DataValue{std::move(v), StatusCode::Good, time_ms});
    } else {
      // Channel flagged invalid by the sensor: keep the last usable value.
      downgrade(idx, StatusCode::UncertainLastUsableValue);
    }
  }

  void downgrade(std::size_t idx, StatusCode s) {
    const auto& cur = space_.value(idx);
    if (std::holds_alternative<std::monostate>(cur.value)) return;  // never had data
    space_.set_status(idx, s);
  }

  void set_diag(std::size_t idx, Variant v, double time_ms) {
    space_.set_value(idx, DataValue{std::move(v), StatusCode::Good, time_ms});
  }

  void publish_calibration(const NodeBinding& b) {
    const double t = space_.time_ms();
    for (int i = 0; i <= b.k; ++i) {
      space_.set_value(b.bias[i], DataValue{to_vec3_value(b.calibration.accel_bias[i]),
                                            StatusCode::Good, t});
      space_.set_value(b.scale[i], DataValue{to_vec3_value(b.calibration.accel_scale[i]),
                                             StatusCode::Good, t});
    }
    for (int i = 0; i < b.k; ++i)
      space_.set_value(b.offset[i], DataValue{to_float32(b.calibration.distance_offset_mm[i]),
                                              StatusCode::Good, t});
  }

  void build(const NetworkTopology& t) {
    auto s = std::make_shared<ModelStructure>();
    const NodeId object_type = type_id("BaseObjectType");
    const NodeId variable_type = type_id("BaseDataVariableType");
    const NodeId folder = type_id("FolderType");
    const NodeId cell_type = type_id("CellType");
    const NodeId master_type = type_id("WMasterDeviceType");
    const NodeId sensor_type = type_id("SensorNodeDeviceType");
    const NodeId pd_type = type_id("ProcessDataType");
    const NodeId cal_type = type_id("CalibrationType");
    const NodeId diag_type = type_id("DiagnosticsType");

    std::map<std::string, std::size_t> types;
    for (const NodeId& id : {object_type, folder, cell_type, master_type, sensor_type, pd_type,
                             cal_type, diag_type})
      types[id.text()] = s->add({id, NodeClass::ObjectType, id.id, std::nullopt, std::nullopt,
                                 AccessLevel::ReadOnly});
    types[variable_type.text()] = s->add({variable_type, NodeClass::VariableType, variable_type.id,
                                          std::nullopt, std::nullopt, AccessLevel::ReadOnly});

    auto object = [&](std::size_t parent, ReferenceType ref, const std::string& path,
                      const std::string& name, const NodeId& type) {
      std::size_t i =
          s->add({instance_id(path), NodeClass::Object, name, type, std::nullopt, AccessLevel::ReadOnly});
      s->link(parent, ref, i);
      s->link(i, ReferenceType::HasTypeDefinition, types.at(type.text()));
      return i;
    };
    auto variable = [&](std::size_t parent, const std::string& path, const std::string& name,
                        DataType dt, AccessLevel access) {
      std::size_t i = s->add({instance_id(path), NodeClass::Variable, name, variable_type, dt, access});
      s->link(parent, ReferenceType::HasComponent, i);
      s->link(i, ReferenceType::HasTypeDefinition, types.at(variable_type.text()));
      return i;
    };
    auto method = [&](std::size_t parent, const std::string& path, const std::string& name) {
      std::size_t i = s->add({instance_id(path), NodeClass::Method, name, std::nullopt, std::nullopt,
                              AccessLevel::ReadOnly});
      s->link(parent, ReferenceType::HasComponent, i);
      return i;
    };

    const std::size_t root = s->add({instance_id("Root"), NodeClass::Object, "Root", folder,
                                     std::nullopt, AccessLevel::ReadOnly});
    s->link(root, ReferenceType::HasTypeDefinition, types.at(folder.text()));

    for (const auto& cell : t.cells) {
      const std::string cp = "Cell" + cell.cell_id;
      CellBinding cb;
      const std::size_t co = object(root, ReferenceType::Organizes, cp, cp, cell_type);
      const std::size_t cd = object(co, ReferenceType::HasComponent, cp + "/Diagnostics",
                                    "Diagnostics", diag_type);
      cb.cycle_var = variable(cd, cp + "/Diagnostics/CycleIndex", "CycleIndex", DataType::UInt32,
                              AccessLevel::ReadOnly);
      cb.connected_var = variable(cd, cp + "/Diagnostics/ConnectedNodes", "ConnectedNodes",
                                  DataType::UInt32, AccessLevel::ReadOnly);
      for (const auto& m : cell.masters) {
        const std::string mname = "Master" + m.master_id;
        const std::string mp = cp + "/" + mname;
        MasterBinding mb;
        mb.cell_id = cell.cell_id;
        const std::size_t mo = object(co, ReferenceType::HasComponent, mp, mname, master_type);
        const std::size_t md = object(mo, ReferenceType::HasComponent, mp + "/Diagnostics",
                                      "Diagnostics", diag_type);
        mb.cycle_var = variable(md, mp + "/Diagnostics/CycleIndex", "CycleIndex", DataType::UInt32,
                                AccessLevel::ReadOnly);
        mb.connected_var = variable(md, mp + "/Diagnostics/ConnectedNodes", "ConnectedNodes",
                                    DataType::UInt32, AccessLevel::ReadOnly);
        for (const auto& n : m.nodes) {
          const std::string nname = "Node" + n.node_id;
          const std::string np = mp + "/" + nname;
          NodeBinding b;
          b.node_id = n.node_id;
          b.master_id = m.master_id;
          b.k = static_cast<int>(n.rods.size());
          for (const auto& rod : n.rods) b.nominal_length_mm.push_back(rod.nominal_length_mm);
          b.calibration = CalibrationParams::identity(b.k);
          b.object = object(mo, ReferenceType::HasComponent, np, nname, sensor_type);

          const std::size_t pd = object(b.object, ReferenceType::HasComponent, np + "/ProcessData",
                                        "ProcessData", pd_type);
          for (int i = 0; i <= b.k; ++i) {
            const std::string an = "Acceleration" + std::to_string(i);
            b.accel.push_back(variable(pd, np + "/ProcessData/" + an, an, DataType::Float32Vec3,
                                       AccessLevel::ReadOnly));
            if (i > 0) {
              const std::string dn = "Distance" + std::to_string(i);
              b.distance.push_back(variable(pd, np + "/ProcessData/" + dn, dn, DataType::Float32,
                                            AccessLevel::ReadOnly));
            }
          }
          const std::size_t cal = object(b.object, ReferenceType::HasComponent, np + "/Calibration",
                                         "Calibration", cal_type);
          for (int i = 0; i <= b.k; ++i) {
            const std::string bn = "AccelBias" + std::to_string(i);
            const std::string sn = "AccelScale" + std::to_string(i);
            b.bias.push_back(variable(cal, np + "/Calibration/" + bn, bn, DataType::Float32Vec3,
                                      AccessLevel::ReadWrite));
            b.scale.push_back(variable(cal, np + "/Calibration/" + sn, sn, DataType::Float32Vec3,
                                       AccessLevel::ReadWrite));
          }
          for (int i = 1; i <= b.k; ++i) {
            const std::string on = "DistanceOffset" + std::to_string(i);
            b.offset.push_back(variable(cal, np + "/Calibration/" + on, on, DataType::Float32,
                                        AccessLevel::ReadWrite));
          }
          const std::size_t dg = object(b.object, ReferenceType::HasComponent, np + "/Diagnostics",
                                        "Diagnostics", diag_type);
          b.rssi = variable(dg, np + "/Diagnostics/Rssi", "Rssi", DataType::Float32,
                            AccessLevel::ReadOnly);
          b.lost = variable(dg, np + "/Diagnostics/LostFrames", "LostFrames", DataType::UInt32,
                            AccessLevel::ReadOnly);
          b.retx = variable(dg, np + "/Diagnostics/Retransmissions", "Retransmissions",
                            DataType::UInt32, AccessLevel::ReadOnly);
          b.port = variable(dg, np + "/Diagnostics/PortStatus", "PortStatus", DataType::Enum,
                            AccessLevel::ReadOnly);
          b.calibrate = method(b.object, np + "/Calibrate", "Calibrate");
          b.reset = method(b.object, np + "/ResetCounters", "ResetCounters");

          const std::size_t bi = nodes_.size();
          for (int i = 0; i <= b.k; ++i) {
            calib_targets_[b.bias[i]] = {bi, CalibKind::Bias, static_cast<std::size_t>(i)};
            calib_targets_[b.scale[i]] = {bi, CalibKind::Scale, static_cast<std::size_t>(i)};
          }
          for (int i = 0; i < b.k; ++i)
            calib_targets_[b.offset[i]] = {bi, CalibKind::Offset, static_cast<std::size_t>(i)};
          by_node_id_[b.node_id] = bi;
          by_object_[b.object] = bi;
          nodes_.push_back(std::move(b));
        }
        cb.masters.push_back(m.master_id);
        masters_[m.master_id] = mb;
      }
      cells_[cell.cell_id] = cb;
    }

    space_ = AddressSpace(std::move(s));
    for (const auto& b : nodes_) {
      publish_calibration(b);
      set_diag(b.rssi, Variant{0.0}, 0.0);
      set_diag(b.lost, Variant{std::uint32_t{0}}, 0.0);
      set_diag(b.retx, Variant{std::uint32_t{0}}, 0.0);
      set_diag(b.port, Variant{EnumValue{0, to_string(PortStatus::Operate)}}, 0.0);
    }
    for (const auto& [_, mb] : masters_) {
      set_diag(mb.cycle_var, Variant{std::uint32_t{0}}, 0.0);
      set_diag(mb.connected_var, Variant{std::uint32_t{0}}, 0.0);
    }
    for (const auto& [_, cb] : cells_) {
      set_diag(cb.cycle_var, Variant{std::uint32_t{0}}, 0.0);
      set_diag(cb.connected_var, Variant{std::uint32_t{0}}, 0.0);
    }
  }

  LinkPolicy policy_;
  Options options_;
  AddressSpace space_;
  std::vector<NodeBinding> nodes_;
  std::unordered_map<std::string, std::size_t> by_node_id_;
  std::unordered_map<std::size_t, std::size_t> by_object_;
  std::unordered_map<std::size_t, CalibTarget> calib_targets_;
  std::map<std::string, MasterBinding> masters_;
  std::map<std::string, CellBinding> cells_;
};

// Structure-only model for a topology (no runtime), e.g. for dumping.
inline AddressSpace build_address_space(const NetworkTopology& t) {
  return InformationModel(t).snapshot();
}

}  // namespace cpfen
