// cpfen-cli: command-line client for cpfen-gateway.
// Exit codes: 0 ok, 1 usage, 2 Bad status, 3 transport, 4 subscription
// dropped, 5 insufficient data.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"

#include "cpfen/address_space.hpp"
#include "cpfen/client.hpp"
#include "cpfen/reconstruct.hpp"
#include "cpfen/topology.hpp"

namespace {

using nlohmann::json;
using cpfen::Client;

enum Exit { kOk = 0, kUsage = 1, kBad = 2, kTransport = 3, kDropped = 4, kInsufficient = 5 };

struct Global {
  std::string server = "127.0.0.1:4840";
  int timeout_ms = 5000;
  std::string output = "table";
};

struct ExitWith {
  int code;
};

std::string node_arg(const std::string& s) {
  if (s.rfind("ns=", 0) == 0) return s;
  return "ns=2;s=" + s;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string value_text(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

std::string timestamp_text(const json& t) {
  if (!t.is_number()) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", t.get<double>());
  return buf;
}

bool bad(const json& status) {
  return status.is_string() && status.get<std::string>().rfind("Bad", 0) == 0;
}

cpfen::NetworkTopology load_topology(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    std::cerr << "cannot open topology " << path << "\n";
    throw ExitWith{kUsage};
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return cpfen::parse_topology(ss.str());
}

class Commands {
 public:
  explicit Commands(const Global& g) : g_(g) {}

  Client& client() {
    if (!client_.connected()) client_.connect(g_.server, std::chrono::milliseconds(g_.timeout_ms));
    return client_;
  }

  // ---- browse ---------------------------------------------------------

  int browse(const std::string& start, bool recursive) {
    const std::string root = node_arg(start);
    auto r = client().request("browse", {{"node", root}});
    if (bad(r["status"])) {
      std::cout << r["status"].get<std::string>() << "\n";
      return kBad;
    }
    if (!recursive) {
      print_refs(root, r["references"], 0);
      return kOk;
    }
    walk(root, r["references"], 0);
    return kOk;
  }

  void walk(const std::string& parent, const json& refs, int depth) {
    for (const auto& ref : refs) {
      print_ref(parent, ref, depth);
      auto r = client().request("browse", {{"node", ref["node"]}});
      if (!r["references"].empty()) walk(ref["node"].get<std::string>(), r["references"], depth + 1);
    }
  }

  void print_refs(const std::string& parent, const json& refs, int depth) {
    for (const auto& ref : refs) print_ref(parent, ref, depth);
  }

  void print_ref(const std::string& parent, const json& ref, int depth) {
    if (g_.output == "json") {
      json line = ref;
      line["parent"] = parent;
      std::cout << line.dump() << "\n";
    } else if (g_.output == "csv") {
      std::cout << csv_field(parent) << "," << ref["reference_type"].get<std::string>() << ","
                << csv_field(ref["node"].get<std::string>()) << "," << ref["node_class"].get<std::string>()
                << "\n";
    } else {
      std::cout << std::string(2 * depth, ' ') << ref["browse_name"].get<std::string>() << "  ["
                << ref["node_class"].get<std::string>() << "]  " << ref["node"].get<std::string>() << "\n";
    }
  }

  // ---- read / write -----------------------------------------------------

  int read(const std::vector<std::string>& nodes) {
    json ids = json::array();
    for (const auto& n : nodes) ids.push_back(node_arg(n));
    auto r = client().request("read", {{"nodes", ids}});
    int rc = kOk;
    if (g_.output == "csv") std::cout << "timestamp,node,value,status\n";
    for (const auto& item : r["results"]) {
      if (bad(item["status"])) rc = kBad;
      print_value(item);
    }
    return rc;
  }

  void print_value(const json& item) {
    if (g_.output == "json") {
      std::cout << item.dump() << "\n";
    } else if (g_.output == "csv") {
      std::cout << timestamp_text(item["timestamp_ms"]) << "," << csv_field(item["node"].get<std::string>())
                << "," << csv_field(value_text(item["value"])) << "," << item["status"].get<std::string>()
                << "\n";
    } else {
      std::cout << item["node"].get<std::string>() << "  " << value_text(item["value"]) << "  "
                << item["status"].get<std::string>() << "  " << timestamp_text(item["timestamp_ms"]) << "\n";
    }
  }

  int write(const std::string& node, const std::string& value_text_in) {
    json value = json::parse(value_text_in, nullptr, false);
    if (value.is_discarded()) value = value_text_in;  // bare word: treat as a string
    auto r = client().request("write", {{"items", json::array({{{"node", node_arg(node)}, {"value", value}}})}});
    return print_status_list(r["results"]);
  }

  int print_status_list(const json& results) {
    int rc = kOk;
    for (const auto& item : results) {
      if (bad(item["status"])) rc = kBad;
      if (g_.output == "json") std::cout << item.dump() << "\n";
      else std::cout << item["node"].get<std::string>() << "  " << item["status"].get<std::string>() << "\n";
    }
    return rc;
  }

  // ---- methods ------------------------------------------------------------

  // Sensor node id ("n0_0") or a full object id.
  std::string resolve_object(const std::string& arg) {
    if (arg.rfind("ns=", 0) == 0) return arg;
    if (arg.find('/') != std::string::npos) return node_arg(arg);
    const std::string want = "Node" + arg;
    auto cells = client().request("browse", {{"node", "ns=2;s=Root"}});
    for (const auto& c : cells["references"]) {
      auto masters = client().request("browse", {{"node", c["node"]}});
      for (const auto& m : masters["references"]) {
        if (m["node_class"] != "Object" || m["browse_name"] == "Diagnostics") continue;
        auto nodes = client().request("browse", {{"node", m["node"]}});
        for (const auto& n : nodes["references"])
          if (n["browse_name"] == want) return n["node"].get<std::string>();
      }
    }
    return node_arg(arg);
  }

  int call(const std::string& node, const std::string& method, const json& args) {
    const auto object = resolve_object(node);
    auto r = client().request("call", {{"object", object}, {"method", method}, {"args", args}});
    const auto status = r["status"].get<std::string>();
    if (g_.output == "json") {
      std::cout << json{{"object", object}, {"method", method}, {"status", status}, {"outputs", r["outputs"]}}.dump()
                << "\n";
    } else {
      std::cout << status << "\n";
      if (!r["outputs"].empty()) {
        for (const auto& [k, v] : r["outputs"].items()) std::cout << k << " " << v.dump() << "\n";
      }
    }
    return bad(r["status"]) ? kBad : kOk;
  }

  // ---- watch ----------------------------------------------------------------

  int watch(const std::vector<std::string>& nodes, double interval_ms, int count) {
    json ids = json::array();
    for (const auto& n : nodes) ids.push_back(node_arg(n));
    auto r = client().request("subscribe", {{"nodes", ids}, {"interval_ms", interval_ms}});
    const auto sid = r["subscription_id"].get<std::uint32_t>();
    const double interval = r["interval_ms"].get<double>();
    if (r.contains("clamped_interval_ms"))
      std::cerr << "interval clamped to " << r["clamped_interval_ms"].get<double>() << " ms\n";
    int rc = kOk;
    for (const auto& item : r["results"])
      if (bad(item["status"])) {
        std::cerr << item["node"].get<std::string>() << ": " << item["status"].get<std::string>() << "\n";
        rc = kBad;
      }
    const auto wait = std::chrono::milliseconds(g_.timeout_ms + static_cast<int>(12 * interval));
    int seen = 0;
    while (count <= 0 || seen < count) {
      auto m = client().next_notification(wait);
      if (!m) throw cpfen::proto::TransportError("no publish within " + std::to_string(wait.count()) + " ms");
      if (m->type == "subscription_dropped" && m->body.value("subscription_id", 0u) == sid) {
        std::cerr << "subscription dropped: " << m->body.value("reason", std::string("?")) << "\n";
        return kDropped;
      }
      if (m->type != "publish" || m->body.value("subscription_id", 0u) != sid) continue;
      ++seen;
      const auto& b = m->body;
      if (g_.output == "json") {
        std::cout << b.dump() << "\n";
      } else if (b.value("keep_alive", false)) {
        std::cout << "# keep-alive cycle=" << b["cycle_index"] << "\n";
      } else {
        for (const auto& item : b["items"])
          std::cout << timestamp_text(item["timestamp_ms"]) << "," << item["node"].get<std::string>() << ","
                    << csv_field(value_text(item["value"])) << "," << item["status"].get<std::string>() << "\n";
      }
      std::cout.flush();
    }
    client().request("unsubscribe", {{"subscription_id", sid}});
    return rc;
  }

  // ---- reconstruct ------------------------------------------------------------

  int reconstruct(const cpfen::NetworkTopology& topo, int cycles, double pitch, const std::string& out_path) {
    struct Channel {
      std::string node_id;
      int index;        // 0..k
      bool distance;
      json latest;      // last Good value seen
      Eigen::Vector3d sum = Eigen::Vector3d::Zero();
      int n = 0;
    };
    std::vector<Channel> channels;
    json ids = json::array();
    std::map<std::string, std::size_t> by_id;
    for (const auto& cell : topo.cells)
      for (const auto& m : cell.masters)
        for (const auto& n : m.nodes) {
          const std::string base =
              "ns=2;s=Cell" + cell.cell_id + "/Master" + m.master_id + "/Node" + n.node_id + "/ProcessData/";
          const int k = static_cast<int>(n.rods.size());
          for (int i = 0; i <= k; ++i) {
            by_id[base + "Acceleration" + std::to_string(i)] = channels.size();
            channels.push_back({n.node_id, i, false, nullptr});
            if (i > 0) {
              by_id[base + "Distance" + std::to_string(i)] = channels.size();
              channels.push_back({n.node_id, i, true, nullptr});
            }
          }
        }
    for (const auto& [id, _] : by_id) ids.push_back(id);

    auto r = client().request("subscribe", {{"nodes", ids}, {"interval_ms", 0.001}});
    const auto sid = r["subscription_id"].get<std::uint32_t>();
    const double interval = r["interval_ms"].get<double>();
    const auto wait = std::chrono::milliseconds(g_.timeout_ms + static_cast<int>(12 * interval));
    for (int seen = 0; seen < cycles;) {
      auto m = client().next_notification(wait);
      if (!m) throw cpfen::proto::TransportError("no publish within " + std::to_string(wait.count()) + " ms");
      if (m->type == "subscription_dropped" && m->body.value("subscription_id", 0u) == sid) {
        std::cerr << "subscription dropped: " << m->body.value("reason", std::string("?")) << "\n";
        return kDropped;
      }
      if (m->type != "publish" || m->body.value("subscription_id", 0u) != sid) continue;
      ++seen;
      for (const auto& item : m->body["items"]) {
        auto it = by_id.find(item["node"].get<std::string>());
        if (it == by_id.end()) continue;
        channels[it->second].latest = item["status"] == "Good" ? item["value"] : json();
      }
      for (auto& c : channels) {
        if (c.latest.is_null()) continue;
        if (c.distance) c.sum.x() += c.latest.get<double>();
        else c.sum += Eigen::Vector3d(c.latest[0].get<double>(), c.latest[1].get<double>(), c.latest[2].get<double>());
        ++c.n;
      }
    }
    client().request("unsubscribe", {{"subscription_id", sid}});

    std::map<std::string, cpfen::PhysicalReading> readings;
    std::vector<std::string> missing;
    topo.for_each_node([&](const auto&, const auto&, const cpfen::SensorNodeConfig& n) {
      auto rd = cpfen::PhysicalReading::zeros(static_cast<int>(n.rods.size()));
      std::fill(rd.valid.begin(), rd.valid.end(), false);
      readings[n.node_id] = rd;
    });
    for (const auto& c : channels) {
      if (c.n == 0) continue;
      auto& rd = readings[c.node_id];
      if (c.distance) {
        rd.distance_mm[c.index - 1] = c.sum.x() / c.n;
      } else {
        rd.accel_g[c.index] = c.sum / c.n;
      }
    }
    // A rod counts only when both its accelerometer and its distance arrived.
    std::map<std::pair<std::string, int>, int> have;
    for (const auto& c : channels)
      if (c.n > 0) ++have[{c.node_id, c.index}];
    for (auto& [id, rd] : readings) {
      rd.valid[0] = have[{id, 0}] == 1;
      for (int i = 1; i <= rd.rod_count(); ++i) rd.valid[i] = have[{id, i}] == 2;
      if (!rd.valid[0]) missing.push_back(id);
    }
    if (!missing.empty()) {
      std::cerr << "insufficient data, no Good Acceleration0 for:";
      for (const auto& id : missing) std::cerr << " " << id;
      std::cerr << "\n";
      return kInsufficient;
    }

    auto obs = cpfen::build_observations(topo, readings, pitch);
    auto init = cpfen::assemble_initial_grid(obs);
    auto res = cpfen::refine(init.positions, obs);
    if (out_path.empty() || out_path == "-") {
      cpfen::write_positions_csv(std::cout, obs.nodes, res.positions);
    } else {
      std::ofstream out(out_path);
      if (!out) {
        std::cerr << "cannot write " << out_path << "\n";
        return kUsage;
      }
      cpfen::write_positions_csv(out, obs.nodes, res.positions);
    }
    std::fprintf(stderr, "residual_rms distance_mm=%.6g tilt_rad=%.6g iterations=%d converged=%s\n",
                 res.residual_rms.distance_mm, res.residual_rms.tilt_rad, res.iterations,
                 res.converged ? "true" : "false");
    return kOk;
  }

  // ---- dump-model -----------------------------------------------------------

  int dump_remote() {
    json nodes = json::array(), refs = json::array();
    std::set<std::string> visited{"ns=2;s=Root"};
    std::vector<json> entries{{{"node_id", "ns=2;s=Root"}, {"browse_name", "Root"}, {"node_class", "Object"}}};
    std::vector<std::string> stack{"ns=2;s=Root"};
    while (!stack.empty()) {
      const auto id = stack.back();
      stack.pop_back();
      auto r = client().request("browse", {{"node", id}});
      for (const auto& ref : r["references"]) {
        const auto target = ref["node"].get<std::string>();
        refs.push_back({{"source", id}, {"type", ref["reference_type"]}, {"target", target}});
        if (!visited.insert(target).second) continue;
        json e = {{"node_id", target}, {"node_class", ref["node_class"]}, {"browse_name", ref["browse_name"]}};
        if (ref.contains("type_definition")) e["type_definition"] = ref["type_definition"];
        entries.push_back(std::move(e));
        stack.push_back(target);
      }
    }
    std::sort(entries.begin(), entries.end(),
              [](const json& a, const json& b) { return a["node_id"] < b["node_id"]; });
    for (auto& e : entries) nodes.push_back(std::move(e));
    std::cout << json{{"nodes", nodes}, {"references", refs}}.dump(g_.output == "json" ? -1 : 2) << "\n";
    return kOk;
  }

 private:
  const Global& g_;
  Client client_;
};

double default_pitch(const cpfen::NetworkTopology& t) {
  double pitch = 0.0;
  t.for_each_node([&](const auto&, const auto&, const cpfen::SensorNodeConfig& n) {
    if (pitch == 0.0 && !n.rods.empty()) pitch = n.rods.front().nominal_length_mm;
  });
  return pitch > 0.0 ? pitch : 100.0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cpfen-cli: client for cpfen-gateway"};
  app.require_subcommand(1);
  Global g;
  app.add_option("--server", g.server, "gateway host:port");
  app.add_option("--timeout-ms", g.timeout_ms, "per-request timeout")->check(CLI::PositiveNumber);
  app.add_option("--output", g.output, "table | json | csv")->check(CLI::IsMember({"table", "json", "csv"}));

  std::string node, value, topology_path, out_path;
  std::vector<std::string> nodes;
  bool recursive = false;
  double interval_ms = 100.0, pitch = 0.0;
  int count = 0, cycles = 16;

  auto* browse = app.add_subcommand("browse", "list references of a node");
  browse->add_option("node", node, "node id or path")->default_val("Root");
  browse->add_flag("--recursive,-r", recursive, "walk the whole subtree");

  auto* read = app.add_subcommand("read", "read variable values");
  read->add_option("nodes", nodes, "node ids")->required();

  auto* write = app.add_subcommand("write", "write one variable");
  write->add_option("node", node)->required();
  write->add_option("value", value, "JSON value, e.g. 0.5 or [0,0,0.01]")->required();

  auto* watch = app.add_subcommand("watch", "subscribe and print changes");
  watch->add_option("nodes", nodes)->required();
  watch->add_option("--interval-ms", interval_ms)->check(CLI::PositiveNumber);
  watch->add_option("--count", count, "stop after N publishes (0 = forever)");

  auto* calibrate = app.add_subcommand("calibrate", "run Calibrate on a sensor node");
  calibrate->add_option("node", node, "sensor node id or object id")->required();

  auto* reset = app.add_subcommand("reset", "run ResetCounters on a sensor node");
  reset->add_option("node", node)->required();

  auto* recon = app.add_subcommand("reconstruct", "average live data and reconstruct the grid");
  recon->add_option("--topology", topology_path, "topology the gateway runs")->required();
  recon->add_option("--cycles", cycles, "publishes to average")->check(CLI::PositiveNumber);
  recon->add_option("--out", out_path, "CSV output file (default stdout)");
  recon->add_option("--pitch", pitch, "grid pitch in mm");

  auto* dump = app.add_subcommand("dump-model", "print the model structure");
  dump->add_option("--topology", topology_path, "build locally from a topology instead of browsing");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }
  if (const char* env = std::getenv("CPFEN_SERVER"); env && *env) g.server = env;

  Commands cmd(g);
  try {
    if (*browse) return cmd.browse(node, recursive);
    if (*read) return cmd.read(nodes);
    if (*write) return cmd.write(node, value);
    if (*watch) return cmd.watch(nodes, interval_ms, count);
    if (*calibrate) return cmd.call(node, "Calibrate", json::object());
    if (*reset) return cmd.call(node, "ResetCounters", json::object());
    if (*recon) {
      auto topo = load_topology(topology_path);
      return cmd.reconstruct(topo, cycles, pitch > 0.0 ? pitch : default_pitch(topo), out_path);
    }
    if (*dump) {
      if (topology_path.empty()) return cmd.dump_remote();
      cpfen::InformationModel model(load_topology(topology_path));
      std::cout << cpfen::dump_model(model.space()).dump(g.output == "json" ? -1 : 2) << "\n";
      return kOk;
    }
  } catch (const ExitWith& e) {
    return e.code;
  } catch (const cpfen::proto::TransportError& e) {
    std::cerr << "transport error: " << e.what() << "\n";
    return kTransport;
  } catch (const cpfen::ServerError& e) {
    std::cerr << "server error " << e.code() << ": " << e.what() << "\n";
    return kBad;
  } catch (const cpfen::proto::ProtocolError& e) {
    std::cerr << "protocol error: " << e.what() << "\n";
    return kTransport;
  } catch (const cpfen::Error& e) {
    std::cerr << e.code() << ": " << e.what() << "\n";
    return kUsage;
  } catch (const json::exception& e) {
    std::cerr << "unexpected response: " << e.what() << "\n";
    return kTransport;
  }
  return kUsage;
}
