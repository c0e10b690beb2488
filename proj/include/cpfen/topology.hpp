#pragma once

// Declarative deployment description: cells, W-Masters, sensor nodes and
// the rods that connect neighbouring nodes on the grid.

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cpfen/common.hpp"

namespace cpfen {

inline constexpr std::size_t kMaxMastersPerCell = 3;
inline constexpr std::size_t kMaxNodesPerMaster = 40;
inline constexpr std::size_t kMaxNodesPerCell = 120;
inline constexpr std::size_t kMaxAssignedRods = 3;
inline constexpr int kMaxPhysicalRods = 6;
inline constexpr double kMaxCellRadiusM = 10.0;

struct LinkModelParams {
  double subcycle_loss_prob = 0.0;
  double rssi_base_dbm = -60.0;
  bool operator==(const LinkModelParams&) const = default;
};

struct RodAssignment {
  std::string rod_id;
  int data_index = 1;
  std::string neighbor_node_id;
  double nominal_length_mm = 0.0;
  bool operator==(const RodAssignment&) const = default;
};

struct SensorNodeConfig {
  std::string node_id;
  int grid_u = 0;
  int grid_v = 0;
  std::vector<RodAssignment> rods;
  int physical_rod_count = 0;
  LinkModelParams link;
  bool operator==(const SensorNodeConfig&) const = default;
};

struct MasterConfig {
  std::string master_id;
  double cycle_ms = 5.0;
  int subcycles_per_cycle = 3;
  std::vector<SensorNodeConfig> nodes;
  bool operator==(const MasterConfig&) const = default;
};

struct CellConfig {
  std::string cell_id;
  double radius_m = 10.0;
  std::vector<MasterConfig> masters;
  bool operator==(const CellConfig&) const = default;
};

struct NetworkTopology {
  std::vector<CellConfig> cells;
  bool operator==(const NetworkTopology&) const = default;

  std::size_t master_count() const {
    std::size_t n = 0;
    for (const auto& c : cells) n += c.masters.size();
    return n;
  }
  std::size_t node_count() const {
    std::size_t n = 0;
    for (const auto& c : cells)
      for (const auto& m : c.masters) n += m.nodes.size();
    return n;
  }
  std::size_t rod_count() const {
    std::size_t n = 0;
    for (const auto& c : cells)
      for (const auto& m : c.masters)
        for (const auto& s : m.nodes) n += s.rods.size();
    return n;
  }
  const SensorNodeConfig* find_node(std::string_view id) const {
    for (const auto& c : cells)
      for (const auto& m : c.masters)
        for (const auto& s : m.nodes)
          if (s.node_id == id) return &s;
    return nullptr;
  }
  template <typename Fn>
  void for_each_node(Fn&& fn) const {
    for (const auto& c : cells)
      for (const auto& m : c.masters)
        for (const auto& s : m.nodes) fn(c, m, s);
  }
};

class SyntaxError : public Error {
 public:
  SyntaxError(std::size_t line, std::size_t column, const std::string& what)
      : Error("SyntaxError", "syntax error at line " + std::to_string(line) +
                                 ", column " + std::to_string(column) + ": " +
                                 what),
        line_(line),
        column_(column) {}
  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

class SchemaError : public Error {
 public:
  SchemaError(std::string path, const std::string& what)
      : Error("SchemaError", path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

class UnassignableRod : public Error {
 public:
  explicit UnassignableRod(const std::string& what)
      : Error("UnassignableRod", what) {}
};

enum class Severity { Warning, Error };

struct Violation {
  Severity severity = Severity::Error;
  std::string code;
  std::string path;
  std::string message;
  bool operator==(const Violation&) const = default;
};

inline bool has_errors(const std::vector<Violation>& vs) {
  return std::any_of(vs.begin(), vs.end(), [](const Violation& v) {
    return v.severity == Severity::Error;
  });
}

namespace detail {

using nlohmann::json;

class SchemaReader {
 public:
  static NetworkTopology read(const json& doc) {
    expect_object(doc, "");
    only_keys(doc, "", {"cells"});
    NetworkTopology t;
    const json& cells = require(doc, "", "cells");
    expect_array(cells, "cells");
    for (std::size_t i = 0; i < cells.size(); ++i)
      t.cells.push_back(read_cell(cells[i], index_path("cells", i)));
    return t;
  }

 private:
  static std::string index_path(const std::string& base, std::size_t i) {
    return base + "[" + std::to_string(i) + "]";
  }
  static std::string field_path(const std::string& base,
                                const std::string& key) {
    return base.empty() ? key : base + "." + key;
  }

  static void expect_object(const json& j, const std::string& path) {
    if (!j.is_object())
      throw SchemaError(path.empty() ? "<root>" : path, "expected an object");
  }
  static void expect_array(const json& j, const std::string& path) {
    if (!j.is_array()) throw SchemaError(path, "expected an array");
  }
  static void only_keys(const json& j, const std::string& path,
                        std::initializer_list<const char*> allowed) {
    for (const auto& [key, _] : j.items()) {
      bool ok = false;
      for (const char* a : allowed) ok = ok || key == a;
      if (!ok) throw SchemaError(field_path(path, key), "unknown field");
    }
  }
  static const json& require(const json& j, const std::string& path,
                             const char* key) {
    auto it = j.find(key);
    if (it == j.end())
      throw SchemaError(field_path(path, key), "missing required field");
    return *it;
  }
  static std::string get_string(const json& j, const std::string& path,
                                const char* key) {
    const json& v = require(j, path, key);
    if (!v.is_string())
      throw SchemaError(field_path(path, key), "expected a string");
    return v.get<std::string>();
  }
  static double number_value(const json& v, const std::string& path) {
    if (!v.is_number()) throw SchemaError(path, "expected a number");
    return v.get<double>();
  }
  static double get_number(const json& j, const std::string& path,
                           const char* key) {
    return number_value(require(j, path, key), field_path(path, key));
  }
  static std::optional<double> opt_number(const json& j,
                                          const std::string& path,
                                          const char* key) {
    auto it = j.find(key);
    if (it == j.end()) return std::nullopt;
    return number_value(*it, field_path(path, key));
  }
  static int int_value(const json& v, const std::string& path) {
    if (!v.is_number_integer()) throw SchemaError(path, "expected an integer");
    auto x = v.get<std::int64_t>();
    if (x < INT32_MIN || x > INT32_MAX)
      throw SchemaError(path, "integer out of range");
    return static_cast<int>(x);
  }
  static int get_int(const json& j, const std::string& path, const char* key) {
    return int_value(require(j, path, key), field_path(path, key));
  }
  static std::optional<int> opt_int(const json& j, const std::string& path,
                                    const char* key) {
    auto it = j.find(key);
    if (it == j.end()) return std::nullopt;
    return int_value(*it, field_path(path, key));
  }

  static CellConfig read_cell(const json& j, const std::string& path) {
    expect_object(j, path);
    only_keys(j, path, {"cell_id", "radius_m", "masters"});
    CellConfig c;
    c.cell_id = get_string(j, path, "cell_id");
    c.radius_m = get_number(j, path, "radius_m");
    const std::string mp = field_path(path, "masters");
    const json& masters = require(j, path, "masters");
    expect_array(masters, mp);
    for (std::size_t i = 0; i < masters.size(); ++i)
      c.masters.push_back(read_master(masters[i], index_path(mp, i)));
    return c;
  }

  static MasterConfig read_master(const json& j, const std::string& path) {
    expect_object(j, path);
    only_keys(j, path,
              {"master_id", "cycle_ms", "subcycles_per_cycle", "nodes"});
    MasterConfig m;
    m.master_id = get_string(j, path, "master_id");
    m.cycle_ms = opt_number(j, path, "cycle_ms").value_or(5.0);
    m.subcycles_per_cycle = opt_int(j, path, "subcycles_per_cycle").value_or(3);
    const std::string np = field_path(path, "nodes");
    const json& nodes = require(j, path, "nodes");
    expect_array(nodes, np);
    for (std::size_t i = 0; i < nodes.size(); ++i)
      m.nodes.push_back(read_node(nodes[i], index_path(np, i)));
    return m;
  }

  static SensorNodeConfig read_node(const json& j, const std::string& path) {
    expect_object(j, path);
    only_keys(j, path,
              {"node_id", "grid_u", "grid_v", "physical_rod_count", "link",
               "rods"});
    SensorNodeConfig n;
    n.node_id = get_string(j, path, "node_id");
    n.grid_u = get_int(j, path, "grid_u");
    n.grid_v = get_int(j, path, "grid_v");
    if (auto it = j.find("link"); it != j.end()) {
      const std::string lp = field_path(path, "link");
      expect_object(*it, lp);
      only_keys(*it, lp, {"subcycle_loss_prob", "rssi_base_dbm"});
      n.link.subcycle_loss_prob = get_number(*it, lp, "subcycle_loss_prob");
      n.link.rssi_base_dbm =
          opt_number(*it, lp, "rssi_base_dbm").value_or(-60.0);
    }
    const std::string rp = field_path(path, "rods");
    const json& rods = require(j, path, "rods");
    expect_array(rods, rp);
    std::set<int> indices;
    for (std::size_t i = 0; i < rods.size(); ++i) {
      const std::string p = index_path(rp, i);
      expect_object(rods[i], p);
      only_keys(rods[i], p,
                {"rod_id", "data_index", "neighbor_node_id",
                 "nominal_length_mm"});
      RodAssignment r;
      r.rod_id = get_string(rods[i], p, "rod_id");
      r.data_index = get_int(rods[i], p, "data_index");
      r.neighbor_node_id = get_string(rods[i], p, "neighbor_node_id");
      r.nominal_length_mm = get_number(rods[i], p, "nominal_length_mm");
      indices.insert(r.data_index);
      n.rods.push_back(std::move(r));
    }
    // Data indices must be exactly 1..n; the count limit itself is a
    // validation concern (ROD_LIMIT), not a schema one.
    bool contiguous = indices.size() == n.rods.size();
    int expected = 1;
    for (int idx : indices) contiguous = contiguous && idx == expected++;
    if (!contiguous)
      throw SchemaError(rp, "node '" + n.node_id +
                                "': rod data_index values must be exactly 1.." +
                                std::to_string(n.rods.size()));
    std::sort(n.rods.begin(), n.rods.end(),
              [](const RodAssignment& a, const RodAssignment& b) {
                return a.data_index < b.data_index;
              });
    n.physical_rod_count = opt_int(j, path, "physical_rod_count")
                               .value_or(static_cast<int>(n.rods.size()));
    return n;
  }
};

inline std::pair<std::size_t, std::size_t> line_column(std::string_view text,
                                                       std::size_t offset) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

}  // namespace detail

// Parses the JSON topology document. Defaults are applied for optional
// fields; unknown fields are rejected.
inline NetworkTopology parse_topology(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    // byte is 1-based and points just past the offending character
    std::size_t offset = e.byte > 0 ? e.byte - 1 : 0;
    auto [line, col] = detail::line_column(text, offset);
    throw SyntaxError(line, col, e.what());
  }
  return detail::SchemaReader::read(doc);
}

inline nlohmann::json topology_to_json(const NetworkTopology& t) {
  using nlohmann::json;
  json cells = json::array();
  for (const auto& c : t.cells) {
    json masters = json::array();
    for (const auto& m : c.masters) {
      json nodes = json::array();
      for (const auto& n : m.nodes) {
        json rods = json::array();
        for (const auto& r : n.rods)
          rods.push_back({{"rod_id", r.rod_id},
                          {"data_index", r.data_index},
                          {"neighbor_node_id", r.neighbor_node_id},
                          {"nominal_length_mm", r.nominal_length_mm}});
        nodes.push_back(
            {{"node_id", n.node_id},
             {"grid_u", n.grid_u},
             {"grid_v", n.grid_v},
             {"physical_rod_count", n.physical_rod_count},
             {"link",
              {{"subcycle_loss_prob", n.link.subcycle_loss_prob},
               {"rssi_base_dbm", n.link.rssi_base_dbm}}},
             {"rods", std::move(rods)}});
      }
      masters.push_back({{"master_id", m.master_id},
                         {"cycle_ms", m.cycle_ms},
                         {"subcycles_per_cycle", m.subcycles_per_cycle},
                         {"nodes", std::move(nodes)}});
    }
    cells.push_back({{"cell_id", c.cell_id},
                     {"radius_m", c.radius_m},
                     {"masters", std::move(masters)}});
  }
  return json{{"cells", std::move(cells)}};
}

inline std::string serialize_topology(const NetworkTopology& t) {
  return topology_to_json(t).dump(2) + "\n";
}

// Checks the capacity and consistency invariants. Violations are sorted by
// path (then code) so the output is deterministic.
inline std::vector<Violation> validate_topology(const NetworkTopology& t) {
  std::vector<Violation> out;
  auto add = [&](Severity s, std::string code, std::string path,
                 std::string msg) {
    out.push_back({s, std::move(code), std::move(path), std::move(msg)});
  };

  std::map<std::string, std::string> ids;  // id -> first path seen
  auto claim = [&](const std::string& kind, const std::string& id,
                   const std::string& path) {
    auto [it, inserted] = ids.emplace(kind + ":" + id, path);
    if (!inserted)
      add(Severity::Error, "DUPLICATE_ID", path,
          kind + " id '" + id + "' already used at " + it->second);
  };

  struct NodeRef {
    int u, v;
    std::string path;
  };
  std::map<std::string, NodeRef> node_index;
  std::map<std::pair<int, int>, std::string> grid;

  for (std::size_t ci = 0; ci < t.cells.size(); ++ci) {
    const auto& cell = t.cells[ci];
    const std::string cp = "cells[" + std::to_string(ci) + "]";
    claim("cell", cell.cell_id, cp);
    if (!(cell.radius_m > 0.0))
      add(Severity::Error, "INVALID_VALUE", cp + ".radius_m",
          "cell radius must be positive");
    else if (cell.radius_m > kMaxCellRadiusM)
      add(Severity::Warning, "CELL_RADIUS", cp + ".radius_m",
          "cell radius exceeds the specified 10 m range");
    if (cell.masters.size() > kMaxMastersPerCell)
      add(Severity::Error, "CELL_MASTER_LIMIT", cp + ".masters",
          std::to_string(cell.masters.size()) +
              " W-Masters in one cell (limit 3)");
    std::size_t cell_nodes = 0;
    for (std::size_t mi = 0; mi < cell.masters.size(); ++mi) {
      const auto& m = cell.masters[mi];
      const std::string mp = cp + ".masters[" + std::to_string(mi) + "]";
      claim("master", m.master_id, mp);
      if (!(m.cycle_ms > 0.0))
        add(Severity::Error, "INVALID_VALUE", mp + ".cycle_ms",
            "cycle time must be positive");
      if (m.subcycles_per_cycle < 1)
        add(Severity::Error, "INVALID_VALUE", mp + ".subcycles_per_cycle",
            "at least one sub-cycle is required");
      if (m.nodes.size() > kMaxNodesPerMaster)
        add(Severity::Error, "MASTER_NODE_LIMIT", mp + ".nodes",
            std::to_string(m.nodes.size()) +
                " sensor nodes on one W-Master (limit 40)");
      cell_nodes += m.nodes.size();
      for (std::size_t ni = 0; ni < m.nodes.size(); ++ni) {
        const auto& n = m.nodes[ni];
        const std::string np = mp + ".nodes[" + std::to_string(ni) + "]";
        claim("node", n.node_id, np);
        node_index.emplace(n.node_id, NodeRef{n.grid_u, n.grid_v, np});
        auto [git, fresh] = grid.emplace(std::pair{n.grid_u, n.grid_v}, np);
        if (!fresh)
          add(Severity::Error, "GRID_COLLISION", np,
              "grid position already occupied by " + git->second);
        const auto& p = n.link.subcycle_loss_prob;
        if (!(p >= 0.0 && p <= 1.0))
          add(Severity::Error, "INVALID_VALUE", np + ".link.subcycle_loss_prob",
              "loss probability must lie in [0, 1]");
        if (n.rods.size() > kMaxAssignedRods)
          add(Severity::Error, "ROD_LIMIT", np + ".rods",
              std::to_string(n.rods.size()) +
                  " rods assigned to one node (limit 3)");
        std::vector<int> idx;
        for (const auto& r : n.rods) idx.push_back(r.data_index);
        std::sort(idx.begin(), idx.end());
        for (std::size_t k = 0; k < idx.size(); ++k)
          if (idx[k] != static_cast<int>(k) + 1) {
            add(Severity::Error, "ROD_INDEX", np + ".rods",
                "rod data indices must be exactly 1.." +
                    std::to_string(idx.size()));
            break;
          }
        if (n.physical_rod_count > kMaxPhysicalRods ||
            n.physical_rod_count < static_cast<int>(n.rods.size()))
          add(Severity::Error, "PHYSICAL_ROD_COUNT", np + ".physical_rod_count",
              "physical rod count must lie in [assigned rods, 6]");
        for (std::size_t ri = 0; ri < n.rods.size(); ++ri) {
          const auto& r = n.rods[ri];
          const std::string rp = np + ".rods[" + std::to_string(ri) + "]";
          claim("rod", r.rod_id, rp);
          if (!(r.nominal_length_mm > 0.0))
            add(Severity::Error, "INVALID_VALUE", rp + ".nominal_length_mm",
                "nominal rod length must be positive");
        }
      }
    }
    if (cell_nodes > kMaxNodesPerCell)
      add(Severity::Error, "CELL_NODE_LIMIT", cp,
          std::to_string(cell_nodes) + " sensor nodes in one cell (limit 120)");
  }

  // Rod endpoints need the full node index, hence the second pass.
  std::set<std::pair<std::string, std::string>> edges;
  t.for_each_node([&](const CellConfig&, const MasterConfig&,
                      const SensorNodeConfig& n) {
    const std::string& np = node_index.at(n.node_id).path;
    for (std::size_t ri = 0; ri < n.rods.size(); ++ri) {
      const auto& r = n.rods[ri];
      const std::string rp = np + ".rods[" + std::to_string(ri) + "]";
      auto it = node_index.find(r.neighbor_node_id);
      if (it == node_index.end()) {
        add(Severity::Error, "UNKNOWN_NEIGHBOR", rp + ".neighbor_node_id",
            "rod '" + r.rod_id + "' references unknown node '" +
                r.neighbor_node_id + "'");
        continue;
      }
      const int du = std::abs(it->second.u - n.grid_u);
      const int dv = std::abs(it->second.v - n.grid_v);
      if (du + dv != 1) {
        add(Severity::Error, "ADJACENCY", rp + ".neighbor_node_id",
            "rod '" + r.rod_id + "' connects nodes that are not grid-adjacent");
        continue;
      }
      auto key = std::minmax(n.node_id, r.neighbor_node_id);
      if (!edges.emplace(key.first, key.second).second)
        add(Severity::Error, "DUPLICATE_EDGE", rp,
            "rod '" + r.rod_id + "' duplicates an already assigned rod");
    }
  });

  std::stable_sort(out.begin(), out.end(),
                   [](const Violation& a, const Violation& b) {
                     return std::tie(a.path, a.code) < std::tie(b.path, b.code);
                   });
  return out;
}

struct GridNode {
  std::string node_id;
  int u = 0;
  int v = 0;
};

// Distributes every lattice edge to exactly one endpoint. The endpoint with
// the lexicographically smaller (u, v) takes the rod unless it already
// holds three; then the other one does. Edges are processed in
// lexicographic order of (smaller endpoint, larger endpoint).
inline std::map<std::string, std::vector<RodAssignment>> assign_rod_indices(
    const std::vector<GridNode>& nodes,
    const std::vector<std::pair<std::string, std::string>>& edges,
    double nominal_length_mm) {
  std::map<std::string, const GridNode*> by_id;
  for (const auto& n : nodes) by_id.emplace(n.node_id, &n);

  struct Edge {
    const GridNode* lo;
    const GridNode* hi;
  };
  std::vector<Edge> ordered;
  for (const auto& [a, b] : edges) {
    auto ia = by_id.find(a), ib = by_id.find(b);
    if (ia == by_id.end() || ib == by_id.end())
      throw UnassignableRod("edge " + a + "-" + b +
                            " references an unknown node");
    const GridNode* na = ia->second;
    const GridNode* nb = ib->second;
    if (std::abs(na->u - nb->u) + std::abs(na->v - nb->v) != 1)
      throw UnassignableRod("edge " + a + "-" + b + " is not a lattice edge");
    if (std::pair{nb->u, nb->v} < std::pair{na->u, na->v}) std::swap(na, nb);
    ordered.push_back({na, nb});
  }
  std::sort(ordered.begin(), ordered.end(), [](const Edge& x, const Edge& y) {
    return std::tuple{x.lo->u, x.lo->v, x.hi->u, x.hi->v} <
           std::tuple{y.lo->u, y.lo->v, y.hi->u, y.hi->v};
  });

  std::map<std::string, std::vector<RodAssignment>> out;
  for (const auto& n : nodes) out[n.node_id];
  for (const auto& e : ordered) {
    const GridNode* owner = e.lo;
    const GridNode* other = e.hi;
    if (out[owner->node_id].size() >= kMaxAssignedRods) std::swap(owner, other);
    auto& list = out[owner->node_id];
    if (list.size() >= kMaxAssignedRods)
      throw UnassignableRod("both endpoints of edge " + e.lo->node_id + "-" +
                            e.hi->node_id + " already hold 3 rods");
    list.push_back({"rod_" + owner->node_id + "_" + other->node_id,
                    static_cast<int>(list.size()) + 1, other->node_id,
                    nominal_length_mm});
  }
  return out;
}

inline std::string grid_node_id(int u, int v) {
  return "n" + std::to_string(u) + "_" + std::to_string(v);
}

// A rectangular nu x nv grid on one master in one cell, with every lattice
// edge assigned through assign_rod_indices.
inline NetworkTopology make_grid_topology(int nu, int nv, double pitch_mm,
                                          double loss_prob = 0.0,
                                          std::string cell_id = "1",
                                          std::string master_id = "1") {
  std::vector<GridNode> nodes;
  std::vector<std::pair<std::string, std::string>> edges;
  for (int v = 0; v < nv; ++v)
    for (int u = 0; u < nu; ++u) nodes.push_back({grid_node_id(u, v), u, v});
  for (int v = 0; v < nv; ++v)
    for (int u = 0; u < nu; ++u) {
      if (u + 1 < nu) edges.emplace_back(grid_node_id(u, v), grid_node_id(u + 1, v));
      if (v + 1 < nv) edges.emplace_back(grid_node_id(u, v), grid_node_id(u, v + 1));
    }
  auto rods = assign_rod_indices(nodes, edges, pitch_mm);

  MasterConfig master;
  master.master_id = std::move(master_id);
  for (const auto& gn : nodes) {
    SensorNodeConfig n;
    n.node_id = gn.node_id;
    n.grid_u = gn.u;
    n.grid_v = gn.v;
    n.rods = rods.at(gn.node_id);
    // Physical rods: every lattice neighbour, owned or not.
    n.physical_rod_count = (gn.u > 0) + (gn.u + 1 < nu) + (gn.v > 0) + (gn.v + 1 < nv);
    n.link.subcycle_loss_prob = loss_prob;
    master.nodes.push_back(std::move(n));
  }
  CellConfig cell;
  cell.cell_id = std::move(cell_id);
  cell.radius_m = 10.0;
  cell.masters.push_back(std::move(master));
  NetworkTopology t;
  t.cells.push_back(std::move(cell));
  return t;
}

}  // namespace cpfen
