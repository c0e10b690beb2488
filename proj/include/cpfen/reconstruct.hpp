#pragma once

// Grid shape recovery from tilt and rod-length observations.
//
// Observation model per rod (i -> j, Δp = p_j - p_i):
//   length     |Δp| = d_ij
//   elevation  asin(Δz / |Δp|) = rod tilt (rod accelerometer), or the mean
//              of the endpoint node tilts along the rod direction
//   heading    rows run along world x and columns follow the horizontal
//              direction of the sensor y axis (accelerometers cannot see
//              yaw, so this alignment is assumed and enforced)
//
// Without the heading term, a quad lattice with lengths and elevations
// only is a four-bar linkage per cell and the normal equations are
// singular in the horizontal plane.

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <queue>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "cpfen/common.hpp"
#include "cpfen/process_data.hpp"
#include "cpfen/topology.hpp"

namespace cpfen {

struct GridPoint {
  std::string node_id;
  int u = 0;
  int v = 0;
};

struct TiltObservation {
  std::string node_id;
  double alpha_u = 0.0;  // elevation of sensor x axis, rad
  double alpha_v = 0.0;  // elevation of sensor y axis, rad
  double skew_v = 0.0;   // horizontal direction of the y axis: (sin skew, cos skew)
  double weight = 1.0;
};

struct DistanceObservation {
  std::string node_i;
  std::string node_j;
  double d_mm = 0.0;
  double weight = 1.0;
  std::optional<double> rod_tilt;  // elevation of the chord i -> j, rad
};

struct ObservationSet {
  std::vector<GridPoint> nodes;
  std::vector<TiltObservation> tilts;
  std::vector<DistanceObservation> distances;
  double pitch_mm = 100.0;
};

struct ReconstructionOptions {
  int max_iter = 100;
  double tol = 1e-10;  // step norm, mm
  double lambda_init = 1e-3;
  double distance_sigma_mm = 0.05;
  double tilt_sigma_rad = 0.5 * std::numbers::pi / 180.0;
};

struct ResidualRms {
  double distance_mm = 0.0;
  double tilt_rad = 0.0;
};

struct ReconstructionResult {
  std::vector<Vec3> positions;  // same order as ObservationSet::nodes
  ResidualRms residual_rms;
  int iterations = 0;
  bool converged = false;
  std::vector<double> objective_trace;  // accepted objective values
  std::string message;
};

struct InitialGrid {
  std::vector<Vec3> positions;
  std::vector<std::pair<std::string, std::string>> filled_edges;  // no distance observation
  std::vector<std::string> filled_tilts;                          // no tilt observation
};

class DimensionMismatch : public Error {
 public:
  explicit DimensionMismatch(const std::string& what) : Error("DimensionMismatch", what) {}
};
class DisconnectedGrid : public Error {
 public:
  explicit DisconnectedGrid(const std::string& what) : Error("DisconnectedGrid", what) {}
};

// Tilt angles from a (possibly noisy) static accelerometer reading.
inline TiltObservation tilt_from_accel(std::string node_id, const Vec3& a, double weight = 1.0) {
  TiltObservation t;
  t.node_id = std::move(node_id);
  t.alpha_u = std::asin(std::clamp(a.x(), -1.0, 1.0));
  t.alpha_v = std::asin(std::clamp(a.y(), -1.0, 1.0));
  const Vec3 n = a.norm() > 0.0 ? Vec3(a / a.norm()) : Vec3::UnitZ();
  t.skew_v = std::atan2(-n.x() * n.y(), n.z());
  t.weight = weight;
  return t;
}

// Planar chain with trapezoidal headings: p_i = p_{i-1} + d_i (cos a, sin a),
// a = (alpha_{i-1} + alpha_i) / 2.
inline std::vector<Eigen::Vector2d> integrate_chain(std::span<const double> alphas,
                                                    std::span<const double> lengths,
                                                    const Eigen::Vector2d& origin) {
  if (lengths.empty() || alphas.size() != lengths.size() + 1)
    throw DimensionMismatch("need n >= 1 lengths and n+1 tilt angles, got " +
                            std::to_string(lengths.size()) + " and " + std::to_string(alphas.size()));
  std::vector<Eigen::Vector2d> out;
  out.reserve(alphas.size());
  out.push_back(origin);
  for (std::size_t i = 1; i < alphas.size(); ++i) {
    const double heading = 0.5 * (alphas[i - 1] + alphas[i]);
    out.push_back(out.back() + lengths[i - 1] * Eigen::Vector2d(std::cos(heading), std::sin(heading)));
  }
  return out;
}

namespace detail {

struct GridIndex {
  std::map<std::pair<int, int>, std::size_t> at;
  std::map<std::string, std::size_t> by_id;

  explicit GridIndex(const std::vector<GridPoint>& nodes) {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      at[{nodes[i].u, nodes[i].v}] = i;
      by_id[nodes[i].node_id] = i;
    }
  }
  std::optional<std::size_t> find(int u, int v) const {
    auto it = at.find({u, v});
    if (it == at.end()) return std::nullopt;
    return it->second;
  }
};

// One rod prepared for the least-squares problem.
struct Edge {
  std::size_t i, j;
  bool along_u;
  double d_mm;
  double tilt;  // expected chord elevation i -> j
  double skew;  // expected horizontal direction of a v rod
  double w_d, w_t, w_h;
};

inline std::vector<Edge> build_edges(const ObservationSet& obs, const GridIndex& grid,
                                     const ReconstructionOptions& opt) {
  std::map<std::string, const TiltObservation*> tilt;
  for (const auto& t : obs.tilts) tilt[t.node_id] = &t;
  const double w_d = 1.0 / (opt.distance_sigma_mm * opt.distance_sigma_mm);
  const double w_t = 1.0 / (opt.tilt_sigma_rad * opt.tilt_sigma_rad);
  const double w_h = w_t / (obs.pitch_mm * obs.pitch_mm);

  std::vector<Edge> edges;
  for (const auto& d : obs.distances) {
    auto ii = grid.by_id.find(d.node_i), jj = grid.by_id.find(d.node_j);
    if (ii == grid.by_id.end() || jj == grid.by_id.end())
      throw DimensionMismatch("distance observation references unknown node");
    const auto& a = obs.nodes[ii->second];
    const auto& b = obs.nodes[jj->second];
    const int du = b.u - a.u, dv = b.v - a.v;
    if (std::abs(du) + std::abs(dv) != 1)
      throw DimensionMismatch("distance observation between non-adjacent nodes");
    Edge e{ii->second, jj->second, du != 0, d.d_mm, 0.0, 0.0, w_d * d.weight, 0.0, 0.0};
    const TiltObservation* ta = tilt.count(a.node_id) ? tilt[a.node_id] : nullptr;
    const TiltObservation* tb = tilt.count(b.node_id) ? tilt[b.node_id] : nullptr;
    if (d.rod_tilt) {
      e.tilt = *d.rod_tilt;
      e.w_t = w_t * d.weight;
    } else if (ta && tb) {
      const double sign = du + dv;
      e.tilt = sign * 0.5 * (du ? ta->alpha_u + tb->alpha_u : ta->alpha_v + tb->alpha_v);
      e.w_t = w_t * 0.5 * (ta->weight + tb->weight);
    }
    if (e.along_u) {
      e.w_h = w_h;
    } else if (ta && tb) {
      e.skew = 0.5 * (ta->skew_v + tb->skew_v);
      e.w_h = w_h;
    } else if (ta || tb) {
      e.skew = (ta ? ta : tb)->skew_v;
      e.w_h = w_h;
    } else {
      e.w_h = w_h;  // assume straight column
    }
    edges.push_back(e);
  }
  return edges;
}

// Residual and gradient blocks of one edge, unweighted.
struct EdgeTerms {
  double r_d, r_t, r_h;
  Vec3 g_d, g_t, g_h;  // derivative w.r.t. p_j; w.r.t. p_i it is the negation
};

inline EdgeTerms edge_terms(const Edge& e, const Vec3& pi, const Vec3& pj) {
  EdgeTerms t{};
  const Vec3 dp = pj - pi;
  const double len = dp.norm();
  t.r_d = len - e.d_mm;
  t.g_d = len > 0.0 ? Vec3(dp / len) : Vec3::Zero();

  const double q = len > 0.0 ? std::clamp(dp.z() / len, -1.0, 1.0) : 0.0;
  t.r_t = std::asin(q) - e.tilt;
  const double h = std::hypot(dp.x(), dp.y());
  if (len > 0.0) {
    // d asin(dz/L) / d dp = e_z / h - dz * dp / (h L^2)
    const double hs = std::max(h, 1e-12 * len);
    t.g_t = Vec3::UnitZ() / hs - dp.z() * dp / (hs * len * len);
  } else {
    t.g_t = Vec3::Zero();
  }

  if (e.along_u) {
    t.r_h = dp.y();
    t.g_h = Vec3::UnitY();
  } else {
    const double c = std::cos(e.skew), s = std::sin(e.skew);
    t.r_h = dp.x() * c - dp.y() * s;
    t.g_h = Vec3(c, -s, 0.0);
  }
  return t;
}

struct Gauge {
  std::size_t anchor = 0;
  std::optional<std::size_t> heading_node;  // y coordinate pinned
};

inline Gauge choose_gauge(const std::vector<GridPoint>& nodes, const GridIndex& grid) {
  Gauge g;
  auto best = std::pair{INT32_MAX, INT32_MAX};
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    auto key = std::pair{nodes[i].v, nodes[i].u};
    if (key < best) {
      best = key;
      g.anchor = i;
    }
  }
  if (!nodes.empty())
    g.heading_node = grid.find(nodes[g.anchor].u + 1, nodes[g.anchor].v);
  return g;
}

// Free-coordinate layout: -1 for pinned coordinates.
inline std::vector<int> free_layout(std::size_t n, const Gauge& g, int& count) {
  std::vector<int> idx(3 * n, -1);
  count = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) {
      if (i == g.anchor) continue;
      if (g.heading_node && i == *g.heading_node && c == 1) continue;
      idx[3 * i + c] = count++;
    }
  return idx;
}

}  // namespace detail

// Integrates row v_min from the anchor with the u tilts, then every column
// upwards from its row anchor with the v tilts; remaining nodes are reached
// breadth-first. Missing rod lengths fall back to the nominal pitch, missing
// tilts to zero; both are reported.
inline InitialGrid assemble_initial_grid(const ObservationSet& obs) {
  InitialGrid out;
  const auto& nodes = obs.nodes;
  if (nodes.empty()) throw DisconnectedGrid("no nodes");
  detail::GridIndex grid(nodes);
  std::map<std::string, const TiltObservation*> tilt;
  for (const auto& t : obs.tilts) tilt[t.node_id] = &t;
  std::map<std::pair<std::size_t, std::size_t>, double> dist;
  for (const auto& d : obs.distances) {
    auto ii = grid.by_id.find(d.node_i), jj = grid.by_id.find(d.node_j);
    if (ii == grid.by_id.end() || jj == grid.by_id.end()) continue;
    dist[{ii->second, jj->second}] = d.d_mm;
    dist[{jj->second, ii->second}] = d.d_mm;
  }
  TiltObservation zero;
  auto tilt_of = [&](std::size_t i) -> const TiltObservation& {
    auto it = tilt.find(nodes[i].node_id);
    if (it != tilt.end()) return *it->second;
    if (std::find(out.filled_tilts.begin(), out.filled_tilts.end(), nodes[i].node_id) ==
        out.filled_tilts.end())
      out.filled_tilts.push_back(nodes[i].node_id);
    return zero;
  };
  auto length_of = [&](std::size_t a, std::size_t b) {
    auto it = dist.find({a, b});
    if (it != dist.end()) return it->second;
    out.filled_edges.emplace_back(nodes[a].node_id, nodes[b].node_id);
    return obs.pitch_mm;
  };

  out.positions.assign(nodes.size(), Vec3::Zero());
  std::vector<bool> placed(nodes.size(), false);
  const auto gauge = detail::choose_gauge(nodes, grid);
  const int u0 = nodes[gauge.anchor].u, v0 = nodes[gauge.anchor].v;

  // Row v0 through the planar chain integrator.
  std::vector<std::size_t> row{gauge.anchor};
  while (auto next = grid.find(nodes[row.back()].u + 1, v0)) row.push_back(*next);
  placed[gauge.anchor] = true;
  if (row.size() > 1) {
    std::vector<double> alphas, lengths;
    for (std::size_t k = 0; k < row.size(); ++k) {
      alphas.push_back(tilt_of(row[k]).alpha_u);
      if (k > 0) lengths.push_back(length_of(row[k - 1], row[k]));
    }
    const auto xz = integrate_chain(alphas, lengths, Eigen::Vector2d::Zero());
    for (std::size_t k = 0; k < row.size(); ++k) {
      out.positions[row[k]] = Vec3(xz[k].x(), 0.0, xz[k].y());
      placed[row[k]] = true;
    }
  }

  // Single rod step from a placed node to a lattice neighbour.
  auto step = [&](std::size_t from, std::size_t to) {
    const int du = nodes[to].u - nodes[from].u;
    const int dv = nodes[to].v - nodes[from].v;
    const auto& ta = tilt_of(from);
    const auto& tb = tilt_of(to);
    const double d = length_of(from, to);
    Vec3 dir;
    if (du != 0) {
      const double a = 0.5 * (ta.alpha_u + tb.alpha_u);
      dir = Vec3(std::cos(a), 0.0, std::sin(a)) * du;
    } else {
      const double a = 0.5 * (ta.alpha_v + tb.alpha_v);
      const double s = 0.5 * (ta.skew_v + tb.skew_v);
      dir = Vec3(std::cos(a) * std::sin(s), std::cos(a) * std::cos(s), std::sin(a)) * dv;
    }
    out.positions[to] = out.positions[from] + d * dir;
    placed[to] = true;
  };

  for (std::size_t anchor : row) {
    std::size_t cur = anchor;
    while (auto next = grid.find(nodes[cur].u, nodes[cur].v + 1)) {
      if (placed[*next]) break;
      step(cur, *next);
      cur = *next;
    }
  }

  std::queue<std::size_t> frontier;
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (placed[i]) frontier.push(i);
  while (!frontier.empty()) {
    const std::size_t cur = frontier.front();
    frontier.pop();
    static constexpr int du[4] = {1, -1, 0, 0};
    static constexpr int dv[4] = {0, 0, 1, -1};
    for (int k = 0; k < 4; ++k) {
      auto next = grid.find(nodes[cur].u + du[k], nodes[cur].v + dv[k]);
      if (!next || placed[*next]) continue;
      step(cur, *next);
      frontier.push(*next);
    }
  }
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (!placed[i])
      throw DisconnectedGrid("node '" + nodes[i].node_id + "' is not connected to grid (" +
                             std::to_string(u0) + "," + std::to_string(v0) + ")");
  return out;
}

// Weighted least-squares objective sum(w r^2) over all edges.
inline double reconstruction_objective(const ObservationSet& obs, const std::vector<Vec3>& positions,
                                       const ReconstructionOptions& opt = {}) {
  detail::GridIndex grid(obs.nodes);
  double f = 0.0;
  for (const auto& e : detail::build_edges(obs, grid, opt)) {
    auto t = detail::edge_terms(e, positions[e.i], positions[e.j]);
    f += e.w_d * t.r_d * t.r_d + e.w_t * t.r_t * t.r_t + e.w_h * t.r_h * t.r_h;
  }
  return f;
}

inline ResidualRms residual_rms(const ObservationSet& obs, const std::vector<Vec3>& positions,
                                const ReconstructionOptions& opt = {}) {
  detail::GridIndex grid(obs.nodes);
  double sd = 0.0, st = 0.0;
  std::size_t nd = 0, nt = 0;
  for (const auto& e : detail::build_edges(obs, grid, opt)) {
    auto t = detail::edge_terms(e, positions[e.i], positions[e.j]);
    sd += t.r_d * t.r_d;
    ++nd;
    if (e.w_t > 0.0) {
      st += t.r_t * t.r_t;
      ++nt;
    }
  }
  return {nd ? std::sqrt(sd / nd) : 0.0, nt ? std::sqrt(st / nt) : 0.0};
}

// Gauss-Newton with Levenberg damping (lambda x10 on reject, /10 on
// accept). The anchor node (smallest (v, u)) is pinned and so is the y
// coordinate of its +u neighbour.
inline ReconstructionResult refine(const std::vector<Vec3>& init, const ObservationSet& obs,
                                   const ReconstructionOptions& opt = {}) {
  ReconstructionResult res;
  res.positions = init;
  if (init.size() != obs.nodes.size())
    throw DimensionMismatch("initial positions do not match the node list");
  if (obs.nodes.size() < 2 || obs.distances.empty()) {
    res.message = "gauge not fixable: need at least 2 nodes and 1 distance";
    res.residual_rms = residual_rms(obs, init, opt);
    return res;
  }
  detail::GridIndex grid(obs.nodes);
  const auto edges = detail::build_edges(obs, grid, opt);
  const auto gauge = detail::choose_gauge(obs.nodes, grid);
  int nfree = 0;
  const auto layout = detail::free_layout(obs.nodes.size(), gauge, nfree);
  const int nres = 3 * static_cast<int>(edges.size());

  auto evaluate = [&](const std::vector<Vec3>& p, Eigen::VectorXd& r, Eigen::MatrixXd* jac) {
    r.resize(nres);
    if (jac) jac->setZero(nres, nfree);
    for (std::size_t k = 0; k < edges.size(); ++k) {
      const auto& e = edges[k];
      const auto t = detail::edge_terms(e, p[e.i], p[e.j]);
      const double sw[3] = {std::sqrt(e.w_d), std::sqrt(e.w_t), std::sqrt(e.w_h)};
      const double rv[3] = {t.r_d, t.r_t, t.r_h};
      const Vec3* gv[3] = {&t.g_d, &t.g_t, &t.g_h};
      for (int m = 0; m < 3; ++m) {
        const int row = 3 * static_cast<int>(k) + m;
        r[row] = sw[m] * rv[m];
        if (!jac) continue;
        for (int c = 0; c < 3; ++c) {
          if (int col = layout[3 * e.j + c]; col >= 0) (*jac)(row, col) += sw[m] * (*gv[m])[c];
          if (int col = layout[3 * e.i + c]; col >= 0) (*jac)(row, col) -= sw[m] * (*gv[m])[c];
        }
      }
    }
  };
  auto apply_step = [&](const std::vector<Vec3>& p, const Eigen::VectorXd& delta) {
    std::vector<Vec3> q = p;
    for (std::size_t i = 0; i < p.size(); ++i)
      for (int c = 0; c < 3; ++c)
        if (int col = layout[3 * i + c]; col >= 0) q[i][c] += delta[col];
    return q;
  };

  Eigen::VectorXd r;
  Eigen::MatrixXd jac;
  evaluate(res.positions, r, &jac);
  double cost = r.squaredNorm();
  res.objective_trace.push_back(cost);
  double lambda = opt.lambda_init;

  for (int it = 1; it <= opt.max_iter; ++it) {
    res.iterations = it;
    const Eigen::MatrixXd normal =
        jac.transpose() * jac + lambda * Eigen::MatrixXd::Identity(nfree, nfree);
    const Eigen::VectorXd grad = jac.transpose() * r;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(normal);
    Eigen::VectorXd delta;
    if (ldlt.info() == Eigen::Success) delta = ldlt.solve(-grad);
    if (ldlt.info() != Eigen::Success || !delta.allFinite()) {
      res.message = "SingularNormalEquations";
      break;
    }
    const auto candidate = apply_step(res.positions, delta);
    Eigen::VectorXd r_new;
    evaluate(candidate, r_new, nullptr);
    const double cost_new = r_new.squaredNorm();
    const double step = delta.norm();
    if (std::isfinite(cost_new) && cost_new <= cost) {
      res.positions = candidate;
      r = r_new;
      cost = cost_new;
      res.objective_trace.push_back(cost);
      evaluate(res.positions, r, &jac);
      lambda = std::max(lambda / 10.0, 1e-12);
      if (step < opt.tol) {
        res.converged = true;
        break;
      }
    } else {
      if (step < opt.tol) {
        res.converged = true;  // no representable improvement left
        break;
      }
      lambda *= 10.0;
      if (lambda > 1e16) {
        res.message = "damping limit reached";
        break;
      }
    }
  }
  res.residual_rms = residual_rms(obs, res.positions, opt);
  return res;
}

struct JacobianCheck {
  bool precondition_ok = true;
  double max_relative_deviation = 0.0;
  std::string message;
};

// Analytic residual Jacobian (unweighted, all coordinates free) against
// central differences with step 1e-6 * pitch.
inline JacobianCheck check_jacobian(const ObservationSet& obs, const std::vector<Vec3>& positions,
                                    const ReconstructionOptions& opt = {}) {
  JacobianCheck out;
  detail::GridIndex grid(obs.nodes);
  const auto edges = detail::build_edges(obs, grid, opt);
  const double h = 1e-6 * obs.pitch_mm;
  for (const auto& e : edges) {
    if ((positions[e.j] - positions[e.i]).norm() <= h) {
      out.precondition_ok = false;
      out.message = "coincident nodes " + obs.nodes[e.i].node_id + " and " + obs.nodes[e.j].node_id;
      return out;
    }
  }
  const std::size_t n = positions.size();
  const std::size_t m = 3 * edges.size();
  Eigen::MatrixXd analytic = Eigen::MatrixXd::Zero(m, 3 * n);
  auto residuals = [&](const std::vector<Vec3>& p) {
    Eigen::VectorXd r(m);
    for (std::size_t k = 0; k < edges.size(); ++k) {
      auto t = detail::edge_terms(edges[k], p[edges[k].i], p[edges[k].j]);
      r[3 * k] = t.r_d;
      r[3 * k + 1] = t.r_t;
      r[3 * k + 2] = t.r_h;
    }
    return r;
  };
  for (std::size_t k = 0; k < edges.size(); ++k) {
    const auto& e = edges[k];
    auto t = detail::edge_terms(e, positions[e.i], positions[e.j]);
    const Vec3* g[3] = {&t.g_d, &t.g_t, &t.g_h};
    for (int row = 0; row < 3; ++row)
      for (int c = 0; c < 3; ++c) {
        analytic(3 * k + row, 3 * e.j + c) += (*g[row])[c];
        analytic(3 * k + row, 3 * e.i + c) -= (*g[row])[c];
      }
  }
  Eigen::MatrixXd numeric(m, 3 * n);
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) {
      auto plus = positions, minus = positions;
      plus[i][c] += h;
      minus[i][c] -= h;
      numeric.col(3 * i + c) = (residuals(plus) - residuals(minus)) / (2.0 * h);
    }
  const double floor = 1e-6 * std::max(analytic.cwiseAbs().maxCoeff(), 1e-300);
  for (Eigen::Index r = 0; r < analytic.rows(); ++r)
    for (Eigen::Index c = 0; c < analytic.cols(); ++c) {
      const double a = analytic(r, c), b = numeric(r, c);
      const double denom = std::max({std::abs(a), std::abs(b), floor});
      out.max_relative_deviation = std::max(out.max_relative_deviation, std::abs(a - b) / denom);
    }
  return out;
}

// Observations from per-node calibrated readings: the central accelerometer
// gives the node tilts, each assigned rod its chord tilt and length.
inline ObservationSet build_observations(const NetworkTopology& t,
                                         const std::map<std::string, PhysicalReading>& readings,
                                         double pitch_mm) {
  ObservationSet obs;
  obs.pitch_mm = pitch_mm;
  t.for_each_node([&](const CellConfig&, const MasterConfig&, const SensorNodeConfig& n) {
    obs.nodes.push_back({n.node_id, n.grid_u, n.grid_v});
    auto it = readings.find(n.node_id);
    if (it == readings.end()) return;
    const auto& r = it->second;
    if (!r.accel_g.empty() && (r.valid.empty() || r.valid[0]))
      obs.tilts.push_back(tilt_from_accel(n.node_id, r.accel_g[0]));
    for (const auto& rod : n.rods) {
      const auto i = static_cast<std::size_t>(rod.data_index);
      if (i >= r.accel_g.size() || i - 1 >= r.distance_mm.size()) continue;
      if (!r.valid.empty() && !r.valid[i]) continue;
      DistanceObservation d;
      d.node_i = n.node_id;
      d.node_j = rod.neighbor_node_id;
      d.d_mm = r.distance_mm[i - 1];
      d.rod_tilt = std::asin(std::clamp(r.accel_g[i].x(), -1.0, 1.0));
      obs.distances.push_back(std::move(d));
    }
  });
  return obs;
}

inline double position_rmse(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]).squaredNorm();
  return a.empty() ? 0.0 : std::sqrt(s / static_cast<double>(a.size()));
}

inline void write_positions_csv(std::ostream& os, const std::vector<GridPoint>& nodes,
                                const std::vector<Vec3>& positions) {
  os << "node_id,u,v,x_mm,y_mm,z_mm\n";
  char buf[160];
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    std::snprintf(buf, sizeof buf, ",%d,%d,%.6f,%.6f,%.6f\n", nodes[i].u, nodes[i].v,
                  positions[i].x(), positions[i].y(), positions[i].z());
    os << nodes[i].node_id << buf;
  }
}

}  // namespace cpfen
