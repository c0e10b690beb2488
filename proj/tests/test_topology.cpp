#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "cpfen/topology.hpp"

using namespace cpfen;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> codes(const std::vector<Violation>& vs) {
  std::vector<std::string> out;
  for (const auto& v : vs) out.push_back(v.code);
  return out;
}

// One cell with the given node counts per master, nodes on distinct grid
// positions and no rods.
NetworkTopology cell_with(const std::vector<int>& nodes_per_master) {
  CellConfig cell{"1", 10.0, {}};
  int serial = 0;
  for (std::size_t m = 0; m < nodes_per_master.size(); ++m) {
    MasterConfig master;
    master.master_id = "m" + std::to_string(m);
    for (int i = 0; i < nodes_per_master[m]; ++i, ++serial) {
      SensorNodeConfig n;
      n.node_id = "s" + std::to_string(serial);
      n.grid_u = serial % 20;
      n.grid_v = serial / 20;
      master.nodes.push_back(n);
    }
    cell.masters.push_back(master);
  }
  return NetworkTopology{{cell}};
}

const char* kMinimal = R"({"cells":[{"cell_id":"c","radius_m":5,"masters":[
  {"master_id":"m","nodes":[{"node_id":"a","grid_u":0,"grid_v":0,"rods":[]}]}]}]})";

}  // namespace

TEST(ParseTopology, MinimalDocumentGetsDefaults) {
  auto t = parse_topology(kMinimal);
  EXPECT_EQ(t.cells.size(), 1u);
  EXPECT_EQ(t.master_count(), 1u);
  EXPECT_EQ(t.node_count(), 1u);
  const auto& m = t.cells[0].masters[0];
  EXPECT_DOUBLE_EQ(m.cycle_ms, 5.0);
  EXPECT_EQ(m.subcycles_per_cycle, 3);
  EXPECT_DOUBLE_EQ(m.nodes[0].link.subcycle_loss_prob, 0.0);
  EXPECT_DOUBLE_EQ(m.nodes[0].link.rssi_base_dbm, -60.0);
  EXPECT_EQ(m.nodes[0].physical_rod_count, 0);
  EXPECT_TRUE(validate_topology(t).empty());
}

TEST(ParseTopology, RodIndexGapIsSchemaErrorNamingNode) {
  const char* doc = R"({"cells":[{"cell_id":"c","radius_m":5,"masters":[{"master_id":"m","nodes":[
    {"node_id":"a","grid_u":0,"grid_v":0,"rods":[
      {"rod_id":"r1","data_index":1,"neighbor_node_id":"b","nominal_length_mm":100},
      {"rod_id":"r3","data_index":3,"neighbor_node_id":"c","nominal_length_mm":100}]},
    {"node_id":"b","grid_u":1,"grid_v":0,"rods":[]},
    {"node_id":"c","grid_u":0,"grid_v":1,"rods":[]}]}]}]})";
  try {
    parse_topology(doc);
    FAIL() << "expected SchemaError";
  } catch (const SchemaError& e) {
    EXPECT_NE(std::string(e.what()).find("'a'"), std::string::npos) << e.what();
    EXPECT_EQ(e.path(), "cells[0].masters[0].nodes[0].rods");
  }
}

TEST(ParseTopology, SyntaxErrorCarriesLineAndColumn) {
  try {
    parse_topology("{\n  \"cells\": [\n    oops\n  ]\n}");
    FAIL();
  } catch (const SyntaxError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_EQ(e.column(), 5u);
  }
}

TEST(ParseTopology, SchemaErrorsCarryFieldPath) {
  auto path_of = [](const std::string& doc) {
    try {
      parse_topology(doc);
    } catch (const SchemaError& e) {
      return e.path();
    }
    return std::string("<none>");
  };
  EXPECT_EQ(path_of(R"({"cells":[{"cell_id":"c","masters":[]}]})"), "cells[0].radius_m");
  EXPECT_EQ(path_of(R"({"cells":[{"cell_id":7,"radius_m":1,"masters":[]}]})"), "cells[0].cell_id");
  EXPECT_EQ(path_of(R"({"cells":[{"cell_id":"c","radius_m":1,"masters":[],"extra":1}]})"),
            "cells[0].extra");
  EXPECT_EQ(path_of(R"({"cells":[{"cell_id":"c","radius_m":1,"masters":[{"master_id":"m",
    "nodes":[{"node_id":"a","grid_u":0.5,"grid_v":0,"rods":[]}]}]}]})"),
            "cells[0].masters[0].nodes[0].grid_u");
  EXPECT_EQ(path_of(R"({"cells":[{"cell_id":"c","radius_m":1,"masters":[{"master_id":"m",
    "nodes":[{"node_id":"a","grid_u":0,"grid_v":0,"rods":[],"link":{}}]}]}]})"),
            "cells[0].masters[0].nodes[0].link.subcycle_loss_prob");
  EXPECT_EQ(path_of("[]"), "<root>");
}

TEST(ParseTopology, ShippedGridExample) {
  auto t = parse_topology(read_file(CPFEN_SOURCE_DIR "/topologies/grid5x5.json"));
  EXPECT_EQ(t.node_count(), 25u);
  EXPECT_EQ(t.rod_count(), 40u);  // 2 * 5 * 4 lattice edges
  EXPECT_TRUE(validate_topology(t).empty());
  EXPECT_EQ(t, make_grid_topology(5, 5, 100.0));
  t.for_each_node([](auto&, auto&, const SensorNodeConfig& n) { EXPECT_LE(n.rods.size(), 3u); });
}

TEST(ParseTopology, SerializeRoundTripProperty) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const int nu = 1 + static_cast<int>(rng() % 6), nv = 1 + static_cast<int>(rng() % 6);
    auto t = make_grid_topology(nu, nv, 50.0 + static_cast<double>(rng() % 100),
                                std::uniform_real_distribution<>(0, 1)(rng));
    t.cells[0].masters[0].cycle_ms = 1.0 + static_cast<double>(rng() % 10) / 3.0;
    EXPECT_EQ(parse_topology(serialize_topology(t)), t);
  }
}

TEST(ValidateTopology, CapacityLimits) {
  EXPECT_TRUE(validate_topology(cell_with({40, 40, 40})).empty());
  EXPECT_EQ(codes(validate_topology(cell_with({1, 1, 1, 1}))),
            std::vector<std::string>{"CELL_MASTER_LIMIT"});
  EXPECT_EQ(codes(validate_topology(cell_with({41}))),
            std::vector<std::string>{"MASTER_NODE_LIMIT"});
  // 121 nodes cannot fit three masters without one exceeding 40.
  EXPECT_EQ(codes(validate_topology(cell_with({40, 40, 41}))),
            (std::vector<std::string>{"CELL_NODE_LIMIT", "MASTER_NODE_LIMIT"}));
}

TEST(ValidateTopology, FourRodsOnOneNode) {
  // Plus-shaped cluster: centre owns rods to all four neighbours.
  NetworkTopology t = cell_with({5});
  auto& nodes = t.cells[0].masters[0].nodes;
  const int pos[5][2] = {{1, 1}, {0, 1}, {2, 1}, {1, 0}, {1, 2}};
  for (int i = 0; i < 5; ++i) {
    nodes[i].grid_u = pos[i][0];
    nodes[i].grid_v = pos[i][1];
  }
  for (int i = 1; i <= 4; ++i)
    nodes[0].rods.push_back({"r" + std::to_string(i), i, nodes[i].node_id, 100.0});
  nodes[0].physical_rod_count = 4;
  EXPECT_EQ(codes(validate_topology(t)), std::vector<std::string>{"ROD_LIMIT"});
}

TEST(ValidateTopology, ConsistencyViolations) {
  auto t = make_grid_topology(2, 2, 100.0);
  auto& nodes = t.cells[0].masters[0].nodes;
  nodes[3].node_id = nodes[0].node_id;
  auto found = codes(validate_topology(t));
  EXPECT_NE(std::find(found.begin(), found.end(), "DUPLICATE_ID"), found.end());

  t = make_grid_topology(3, 1, 100.0);
  t.cells[0].masters[0].nodes[0].rods[0].neighbor_node_id = "n2_0";
  EXPECT_EQ(codes(validate_topology(t)), std::vector<std::string>{"ADJACENCY"});

  t = make_grid_topology(2, 1, 100.0);
  t.cells[0].masters[0].nodes[0].rods[0].neighbor_node_id = "ghost";
  EXPECT_EQ(codes(validate_topology(t)), std::vector<std::string>{"UNKNOWN_NEIGHBOR"});

  t = make_grid_topology(2, 1, 100.0);
  t.cells[0].radius_m = 12.0;
  auto w = validate_topology(t);
  ASSERT_EQ(w.size(), 1u);
  EXPECT_EQ(w[0].code, "CELL_RADIUS");
  EXPECT_EQ(w[0].severity, Severity::Warning);
  EXPECT_FALSE(has_errors(w));

  t = make_grid_topology(2, 1, 100.0);
  t.cells[0].masters[0].nodes[1].grid_u = 0;
  found = codes(validate_topology(t));
  EXPECT_NE(std::find(found.begin(), found.end(), "GRID_COLLISION"), found.end());

  t = make_grid_topology(2, 1, 100.0);
  t.cells[0].masters[0].nodes[0].physical_rod_count = 7;
  EXPECT_EQ(codes(validate_topology(t)), std::vector<std::string>{"PHYSICAL_ROD_COUNT"});
}

TEST(ValidateTopology, PureAndSortedByPath) {
  auto t = cell_with({41, 1, 1, 1});
  t.cells[0].radius_m = 20.0;
  auto a = validate_topology(t);
  auto b = validate_topology(t);
  EXPECT_EQ(a, b);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end(), [](const Violation& x, const Violation& y) {
    return x.path < y.path;
  }));
}

TEST(AssignRodIndices, SingleEdgeGoesToSmallerCoordinate) {
  auto out = assign_rod_indices({{"a", 0, 0}, {"b", 1, 0}}, {{"b", "a"}}, 100.0);
  ASSERT_EQ(out["a"].size(), 1u);
  EXPECT_EQ(out["a"][0].data_index, 1);
  EXPECT_EQ(out["a"][0].neighbor_node_id, "b");
  EXPECT_TRUE(out["b"].empty());
}

TEST(AssignRodIndices, TwoByTwoHandEnumeration) {
  // Edges in processing order: (0,0)-(0,1), (0,0)-(1,0), (0,1)-(1,1),
  // (1,0)-(1,1). The smaller endpoint always has room.
  std::vector<GridNode> nodes{{"a", 0, 0}, {"b", 1, 0}, {"c", 0, 1}, {"d", 1, 1}};
  auto out = assign_rod_indices(nodes, {{"a", "b"}, {"a", "c"}, {"b", "d"}, {"c", "d"}}, 100.0);
  ASSERT_EQ(out["a"].size(), 2u);
  EXPECT_EQ(out["a"][0].neighbor_node_id, "c");
  EXPECT_EQ(out["a"][0].data_index, 1);
  EXPECT_EQ(out["a"][1].neighbor_node_id, "b");
  EXPECT_EQ(out["a"][1].data_index, 2);
  ASSERT_EQ(out["b"].size(), 1u);
  EXPECT_EQ(out["b"][0].neighbor_node_id, "d");
  ASSERT_EQ(out["c"].size(), 1u);
  EXPECT_EQ(out["c"][0].neighbor_node_id, "d");
  EXPECT_TRUE(out["d"].empty());
}

TEST(AssignRodIndices, OverflowMovesToOtherEndpointThenFails) {
  // Repeated edges fill the smaller endpoint first, then spill over.
  std::vector<GridNode> nodes{{"a", 0, 0}, {"b", 1, 0}};
  auto out = assign_rod_indices(nodes, {{"a", "b"}, {"a", "b"}, {"a", "b"}, {"a", "b"}}, 1.0);
  EXPECT_EQ(out["a"].size(), 3u);
  EXPECT_EQ(out["b"].size(), 1u);
  EXPECT_THROW(assign_rod_indices(nodes, std::vector<std::pair<std::string, std::string>>(7, {"a", "b"}), 1.0),
               UnassignableRod);
}

TEST(AssignRodIndices, FiveByFiveBruteForce) {
  auto t = make_grid_topology(5, 5, 100.0);
  // Independent count: each lattice edge belongs to its lower-left endpoint.
  std::map<std::pair<int, int>, int> expected;
  for (int v = 0; v < 5; ++v)
    for (int u = 0; u < 5; ++u) expected[std::make_pair(u, v)] = (u + 1 < 5) + (v + 1 < 5);
  std::size_t total = 0;
  t.for_each_node([&](auto&, auto&, const SensorNodeConfig& n) {
    EXPECT_EQ(static_cast<int>(n.rods.size()), expected[std::make_pair(n.grid_u, n.grid_v)]) << n.node_id;
    total += n.rods.size();
  });
  EXPECT_EQ(total, 40u);
}

TEST(AssignRodIndices, RandomLatticeSubgraphsProperty) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const int nu = 1 + static_cast<int>(rng() % 8), nv = 1 + static_cast<int>(rng() % 8);
    std::vector<GridNode> nodes;
    for (int v = 0; v < nv; ++v)
      for (int u = 0; u < nu; ++u) nodes.push_back({grid_node_id(u, v), u, v});
    std::vector<std::pair<std::string, std::string>> edges;
    for (int v = 0; v < nv; ++v)
      for (int u = 0; u < nu; ++u) {
        if (u + 1 < nu && rng() % 3) edges.emplace_back(grid_node_id(u + 1, v), grid_node_id(u, v));
        if (v + 1 < nv && rng() % 3) edges.emplace_back(grid_node_id(u, v), grid_node_id(u, v + 1));
      }
    std::shuffle(edges.begin(), edges.end(), rng);
    auto out = assign_rod_indices(nodes, edges, 10.0);
    std::multiset<std::pair<std::string, std::string>> seen;
    for (const auto& [id, rods] : out) {
      EXPECT_LE(rods.size(), 3u);
      for (std::size_t i = 0; i < rods.size(); ++i) {
        EXPECT_EQ(rods[i].data_index, static_cast<int>(i) + 1);
        seen.insert(std::minmax(id, rods[i].neighbor_node_id));
      }
    }
    std::multiset<std::pair<std::string, std::string>> want;
    for (const auto& [a, b] : edges) want.insert(std::minmax(a, b));
    EXPECT_EQ(seen, want);
    // Deterministic regardless of input edge order.
    std::shuffle(edges.begin(), edges.end(), rng);
    EXPECT_EQ(assign_rod_indices(nodes, edges, 10.0), out);
  }
}
