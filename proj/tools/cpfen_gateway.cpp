// cpfen-gateway: simulation driver plus protocol server.

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "cpfen/gateway.hpp"
#include "cpfen/server.hpp"
#include "cpfen/topology.hpp"

namespace {

double default_pitch(const cpfen::NetworkTopology& t) {
  double pitch = 0.0;
  t.for_each_node([&](const auto&, const auto&, const cpfen::SensorNodeConfig& n) {
    if (pitch == 0.0 && !n.rods.empty()) pitch = n.rods.front().nominal_length_mm;
  });
  return pitch > 0.0 ? pitch : 100.0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cpfen-gateway: sensor-network simulator and protocol server"};
  std::string topology_path, surface = "flat", listen = "127.0.0.1:4840";
  double noise_accel = 0.0, noise_dist = 0.0, pitch = 0.0;
  std::uint64_t seed = 1, duration = 0;
  bool unpaced = false;
  app.add_option("--topology", topology_path, "topology JSON file")->required();
  app.add_option("--surface", surface, "flat[:PITCH,ROLL] | cylinder:R[,u|v] | sinusoid:A,L[,u|v]");
  app.add_option("--noise-accel", noise_accel, "accelerometer noise sigma, g")->check(CLI::NonNegativeNumber);
  app.add_option("--noise-dist", noise_dist, "distance noise sigma, mm")->check(CLI::NonNegativeNumber);
  app.add_option("--seed", seed, "RNG seed");
  app.add_option("--listen", listen, "host:port (port 0 picks a free one)");
  app.add_flag("--unpaced", unpaced, "run cycles as fast as subscribers keep up");
  app.add_option("--duration-cycles", duration, "stop after N driver cycles (0 = run until signalled)");
  app.add_option("--pitch", pitch, "grid pitch in mm (default: first rod's nominal length)");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  if (const char* env = std::getenv("CPFEN_LISTEN"); env && *env) listen = env;

  // Signals are taken synchronously below; block them before any thread starts.
  sigset_t sigs;
  sigemptyset(&sigs);
  sigaddset(&sigs, SIGINT);
  sigaddset(&sigs, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &sigs, nullptr);

  try {
    std::ifstream in(topology_path);
    if (!in) {
      std::cerr << "cpfen-gateway: cannot open " << topology_path << "\n";
      return 1;
    }
    std::stringstream ss;
    ss << in.rdbuf();
    auto topo = cpfen::parse_topology(ss.str());
    if (auto vs = cpfen::validate_topology(topo); cpfen::has_errors(vs)) {
      for (const auto& v : vs) std::cerr << v.code << " at " << v.path << ": " << v.message << "\n";
      return 1;
    }

    cpfen::GatewayOptions opt;
    opt.surface = cpfen::parse_surface(surface, pitch > 0.0 ? pitch : default_pitch(topo));
    opt.noise = {noise_accel, noise_dist, seed};
    opt.seed = seed;
    opt.paced = !unpaced;
    opt.duration_cycles = duration;

    cpfen::Gateway gw(std::move(topo), opt);
    cpfen::Server server(gw, {.listen = listen});
    server.start();
    std::cout << "listening on " << server.address() << std::endl;
    gw.start();

    timespec tick{0, 100'000'000};
    while (true) {
      int sig = sigtimedwait(&sigs, nullptr, &tick);
      if (sig == SIGINT || sig == SIGTERM) break;
      if (gw.finished()) break;
    }
    server.stop();
    gw.stop();
  } catch (const cpfen::BindError& e) {
    std::cerr << "cpfen-gateway: " << e.what() << "\n";
    return 1;
  } catch (const cpfen::Error& e) {
    std::cerr << "cpfen-gateway: " << e.code() << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}
