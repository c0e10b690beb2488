#pragma once

// Ground-truth deformation source: places grid nodes on a parametric
// surface (arc-length spaced) and synthesizes accelerometer and rod
// distance observations from the resulting poses.

#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <variant>

#include "cpfen/common.hpp"

namespace cpfen {

enum class GridAxis { U, V };

struct FlatSurface {
  double pitch_deg = 0.0;
  double roll_deg = 0.0;
};

struct CylinderBend {
  double radius_mm = 1000.0;
  GridAxis axis = GridAxis::U;
};

struct Sinusoid {
  double amplitude_mm = 0.0;
  double wavelength_mm = 1000.0;
  GridAxis axis = GridAxis::U;
};

struct SurfaceModel {
  std::variant<FlatSurface, CylinderBend, Sinusoid> variant = FlatSurface{};
  double grid_pitch_mm = 100.0;
};

// Position in world millimetres; frame columns are the sensor x, y, z axes
// in world coordinates (x along the grid-u tangent, z the surface normal).
struct NodePose {
  Vec3 position = Vec3::Zero();
  Mat3 frame = Mat3::Identity();
};

struct NoiseModel {
  double accel_sigma_g = 0.0;
  double distance_sigma_mm = 0.0;
  std::uint64_t seed = 0;
};

class InvalidSurface : public Error {
 public:
  explicit InvalidSurface(const std::string& what)
      : Error("InvalidSurface", what) {}
};

inline void validate_surface(const SurfaceModel& s) {
  if (!(s.grid_pitch_mm > 0.0)) throw InvalidSurface("grid pitch must be positive");
  if (const auto* c = std::get_if<CylinderBend>(&s.variant); c && !(c->radius_mm > 0.0))
    throw InvalidSurface("cylinder radius must be positive");
  if (const auto* w = std::get_if<Sinusoid>(&s.variant); w && !(w->wavelength_mm > 0.0))
    throw InvalidSurface("sinusoid wavelength must be positive");
}

namespace detail {

inline double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

// Rotation that lifts the +x axis by `angle` towards +z.
inline Mat3 lift_x(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  Mat3 r;
  r << c, 0, -s,  //
      0, 1, 0,    //
      s, 0, c;
  return r;
}

// Rotation that lifts the +y axis by `angle` towards +z.
inline Mat3 lift_y(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  Mat3 r;
  r << 1, 0, 0,  //
      0, c, -s,  //
      0, s, c;
  return r;
}

// Arc length of h(x) = A sin(kx) from 0 to x, by composite 5-point
// Gauss-Legendre quadrature on sub-intervals no longer than a 32nd of a
// wavelength.
inline double sinusoid_arc_length(double amplitude, double k, double x) {
  static constexpr double nodes[5] = {0.0, -0.5384693101056831, 0.5384693101056831,
                                      -0.9061798459386640, 0.9061798459386640};
  static constexpr double weights[5] = {0.5688888888888889, 0.4786286704993665,
                                        0.4786286704993665, 0.2369268850561891,
                                        0.2369268850561891};
  const double wavelength = 2.0 * std::numbers::pi / k;
  const int segments = std::max(1, static_cast<int>(std::ceil(std::abs(x) / (wavelength / 32.0))));
  const double h = x / segments;
  double sum = 0.0;
  for (int s = 0; s < segments; ++s) {
    const double mid = (s + 0.5) * h;
    for (int q = 0; q < 5; ++q) {
      const double t = mid + 0.5 * h * nodes[q];
      const double slope = amplitude * k * std::cos(k * t);
      sum += weights[q] * std::sqrt(1.0 + slope * slope);
    }
  }
  return 0.5 * h * sum;
}

// Abscissa x at which the sinusoid's arc length from 0 equals s.
inline double sinusoid_abscissa(double amplitude, double k, double s) {
  double x = s;
  for (int it = 0; it < 60; ++it) {
    const double slope = amplitude * k * std::cos(k * x);
    const double step = (sinusoid_arc_length(amplitude, k, x) - s) / std::sqrt(1.0 + slope * slope);
    x -= step;
    if (std::abs(step) < 1e-13 * std::max(1.0, std::abs(s))) break;
  }
  return x;
}

inline Mat3 frame_from_columns(const Vec3& x, const Vec3& y, const Vec3& z) {
  Mat3 f;
  f.col(0) = x;
  f.col(1) = y;
  f.col(2) = z;
  return f;
}

}  // namespace detail

inline NodePose sample_node_pose(const SurfaceModel& surface, int grid_u, int grid_v) {
  const double su = grid_u * surface.grid_pitch_mm;
  const double sv = grid_v * surface.grid_pitch_mm;
  NodePose pose;

  if (const auto* flat = std::get_if<FlatSurface>(&surface.variant)) {
    const Mat3 f = detail::lift_x(detail::deg2rad(flat->pitch_deg)) *
                   detail::lift_y(detail::deg2rad(flat->roll_deg));
    pose.frame = f;
    pose.position = f * Vec3(su, sv, 0.0);
  } else if (const auto* cyl = std::get_if<CylinderBend>(&surface.variant)) {
    const double r = cyl->radius_mm;
    const double s = cyl->axis == GridAxis::U ? su : sv;
    const double other = cyl->axis == GridAxis::U ? sv : su;
    const double phi = s / r;
    const double along = r * std::sin(phi);
    const double height = r * (1.0 - std::cos(phi));
    if (cyl->axis == GridAxis::U) {
      pose.position = Vec3(along, other, height);
      pose.frame = detail::lift_x(phi);
    } else {
      pose.position = Vec3(other, along, height);
      pose.frame = detail::lift_y(phi);
    }
  } else {
    const auto& sin = std::get<Sinusoid>(surface.variant);
    const double s = sin.axis == GridAxis::U ? su : sv;
    const double other = sin.axis == GridAxis::U ? sv : su;
    if (sin.amplitude_mm == 0.0) {
      pose.position = Vec3(su, sv, 0.0);
      return pose;
    }
    const double k = 2.0 * std::numbers::pi / sin.wavelength_mm;
    const double x = detail::sinusoid_abscissa(sin.amplitude_mm, k, s);
    const double height = sin.amplitude_mm * std::sin(k * x);
    const double slope = sin.amplitude_mm * k * std::cos(k * x);
    const double angle = std::atan(slope);
    if (sin.axis == GridAxis::U) {
      pose.position = Vec3(x, other, height);
      pose.frame = detail::lift_x(angle);
    } else {
      pose.position = Vec3(other, x, height);
      pose.frame = detail::lift_y(angle);
    }
  }
  return pose;
}

// Pose of the accelerometer mounted on the rod from `from` to `to`: x runs
// along the chord, z is the owner's surface normal made orthogonal to it.
inline NodePose rod_pose(const NodePose& from, const NodePose& to) {
  NodePose p;
  p.position = 0.5 * (from.position + to.position);
  const Vec3 chord = to.position - from.position;
  const double len = chord.norm();
  if (len == 0.0) return from;
  const Vec3 x = chord / len;
  Vec3 z = from.frame.col(2) - from.frame.col(2).dot(x) * x;
  if (z.norm() < 1e-12) z = from.frame.col(1).cross(x);
  z.normalize();
  p.frame = detail::frame_from_columns(x, z.cross(x), z);
  return p;
}

// Static accelerometer reading in g: gravity reaction expressed in the sensor
// frame plus per-axis white noise.
template <typename Rng>
Vec3 synth_accel(const NodePose& pose, const NoiseModel& noise, Rng& rng) {
  Vec3 a = pose.frame.transpose() * Vec3::UnitZ();
  if (noise.accel_sigma_g > 0.0) {
    std::normal_distribution<double> n(0.0, noise.accel_sigma_g);
    for (int i = 0; i < 3; ++i) a[i] += n(rng);
  }
  return a;
}

// Rod length reading: straight chord between node centres plus white noise.
template <typename Rng>
double synth_distance(const NodePose& a, const NodePose& b, const NoiseModel& noise, Rng& rng) {
  double d = (a.position - b.position).norm();
  if (noise.distance_sigma_mm > 0.0) {
    std::normal_distribution<double> n(0.0, noise.distance_sigma_mm);
    d += n(rng);
  }
  return d;
}

// Parses the command-line surface form: flat | flat:PITCH,ROLL |
// cylinder:R[,u|v] | sinusoid:A,L[,u|v].
inline SurfaceModel parse_surface(const std::string& text, double pitch_mm) {
  SurfaceModel s;
  s.grid_pitch_mm = pitch_mm;
  const auto colon = text.find(':');
  const std::string kind = text.substr(0, colon);
  std::vector<std::string> args;
  if (colon != std::string::npos) {
    std::string rest = text.substr(colon + 1);
    std::size_t pos = 0;
    while (true) {
      auto comma = rest.find(',', pos);
      args.push_back(rest.substr(pos, comma - pos));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
  }
  auto num = [&](std::size_t i) {
    try {
      std::size_t used = 0;
      double v = std::stod(args.at(i), &used);
      if (used != args[i].size()) throw std::invalid_argument(args[i]);
      return v;
    } catch (const std::exception&) {
      throw InvalidSurface("bad numeric argument in surface '" + text + "'");
    }
  };
  auto axis = [&](std::size_t i) {
    if (args.size() <= i) return GridAxis::U;
    if (args[i] == "u") return GridAxis::U;
    if (args[i] == "v") return GridAxis::V;
    throw InvalidSurface("axis must be 'u' or 'v' in surface '" + text + "'");
  };
  if (kind == "flat") {
    if (!args.empty() && args.size() != 2) throw InvalidSurface("flat takes PITCH,ROLL");
    s.variant = args.empty() ? FlatSurface{} : FlatSurface{num(0), num(1)};
  } else if (kind == "cylinder") {
    if (args.empty() || args.size() > 2) throw InvalidSurface("cylinder takes R[,axis]");
    s.variant = CylinderBend{num(0), axis(1)};
  } else if (kind == "sinusoid") {
    if (args.size() < 2 || args.size() > 3) throw InvalidSurface("sinusoid takes A,L[,axis]");
    s.variant = Sinusoid{num(0), num(1), axis(2)};
  } else {
    throw InvalidSurface("unknown surface kind '" + kind + "'");
  }
  validate_surface(s);
  return s;
}

}  // namespace cpfen
