#pragma once

// Cyclic process-data frame of one sensor node.
//
// Layout (little-endian):
//   status           u8   bit0 = central accel valid, bit i = rod i valid,
//                         bits 4..7 reserved (zero)
//   accel0 x,y,z     3 x i16, 1 mg / LSB
//   for i in 1..k:
//     accel_i x,y,z  3 x i16, 1 mg / LSB
//     distance_i     u16, 10 um / LSB
//
// Values are rounded to the nearest LSB (ties away from zero). Values that
// do not fit saturate and clear the channel's validity bit.

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cpfen/common.hpp"

namespace cpfen {

inline constexpr int kMaxRodChannels = 3;
inline constexpr double kAccelLsbG = 0.001;
inline constexpr double kDistanceLsbMm = 0.01;
inline constexpr std::uint8_t kReservedStatusMask = 0xF0;

constexpr std::size_t frame_length(int k) {
  return 1 + 6 * static_cast<std::size_t>(k + 1) + 2 * static_cast<std::size_t>(k);
}

using Frame = std::vector<std::uint8_t>;

// Physical values for one node: accel[0] is the central probe, accel[i] and
// distance[i-1] belong to rod i.
struct PhysicalReading {
  std::vector<Vec3> accel_g;
  std::vector<double> distance_mm;
  std::vector<bool> valid;  // size k+1: [0] central, [i] rod i

  static PhysicalReading zeros(int k) {
    PhysicalReading r;
    r.accel_g.assign(k + 1, Vec3::Zero());
    r.distance_mm.assign(k, 0.0);
    r.valid.assign(k + 1, true);
    return r;
  }
  int rod_count() const { return static_cast<int>(distance_mm.size()); }
};

class ChannelCountMismatch : public Error {
 public:
  explicit ChannelCountMismatch(const std::string& what)
      : Error("ChannelCountMismatch", what) {}
};
class LengthMismatch : public Error {
 public:
  explicit LengthMismatch(const std::string& what) : Error("LengthMismatch", what) {}
};
class ReservedBitsSet : public Error {
 public:
  explicit ReservedBitsSet(const std::string& what) : Error("ReservedBitsSet", what) {}
};

namespace detail {

// Quantizes `value / lsb` into [lo, hi]; returns false on saturation or NaN.
inline bool quantize(double value, double lsb, long lo, long hi, long& out) {
  if (std::isnan(value)) {
    out = 0;
    return false;
  }
  const double scaled = value / lsb;
  if (scaled >= static_cast<double>(hi) + 0.5) {
    out = hi;
    return false;
  }
  if (scaled <= static_cast<double>(lo) - 0.5) {
    out = lo;
    return false;
  }
  out = std::lround(scaled);  // ties away from zero
  if (out > hi) out = hi;
  if (out < lo) out = lo;
  return true;
}

inline void put_u16(Frame& f, std::uint16_t v) {
  f.push_back(static_cast<std::uint8_t>(v & 0xFF));
  f.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline std::uint16_t get_u16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

inline bool put_accel(Frame& f, const Vec3& a) {
  bool ok = true;
  for (int i = 0; i < 3; ++i) {
    long q = 0;
    ok = quantize(a[i], kAccelLsbG, -32767, 32767, q) && ok;
    put_u16(f, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  return ok;
}

inline Vec3 get_accel(std::span<const std::uint8_t> b, std::size_t at) {
  Vec3 a;
  for (int i = 0; i < 3; ++i)
    a[i] = static_cast<std::int16_t>(get_u16(b, at + 2 * i)) * kAccelLsbG;
  return a;
}

}  // namespace detail

inline Frame encode_frame(const PhysicalReading& reading, int k) {
  if (k < 0 || k > kMaxRodChannels)
    throw ChannelCountMismatch("rod channel count must be 0..3, got " + std::to_string(k));
  if (reading.accel_g.size() != static_cast<std::size_t>(k + 1) ||
      reading.distance_mm.size() != static_cast<std::size_t>(k) ||
      reading.valid.size() != static_cast<std::size_t>(k + 1))
    throw ChannelCountMismatch("reading does not carry " + std::to_string(k) + " rod channels");

  Frame f;
  f.reserve(frame_length(k));
  f.push_back(0);
  std::uint8_t status = 0;
  if (detail::put_accel(f, reading.accel_g[0]) && reading.valid[0]) status |= 0x01;
  for (int i = 1; i <= k; ++i) {
    bool ok = detail::put_accel(f, reading.accel_g[i]);
    long q = 0;
    ok = detail::quantize(reading.distance_mm[i - 1], kDistanceLsbMm, 0, 0xFFFF, q) && ok;
    detail::put_u16(f, static_cast<std::uint16_t>(q));
    if (ok && reading.valid[i]) status |= static_cast<std::uint8_t>(1u << i);
  }
  f[0] = status;
  return f;
}

inline PhysicalReading decode_frame(std::span<const std::uint8_t> bytes, int k) {
  if (k < 0 || k > kMaxRodChannels)
    throw ChannelCountMismatch("rod channel count must be 0..3, got " + std::to_string(k));
  if (bytes.size() != frame_length(k))
    throw LengthMismatch("expected " + std::to_string(frame_length(k)) + " bytes for k=" +
                         std::to_string(k) + ", got " + std::to_string(bytes.size()));
  const std::uint8_t status = bytes[0];
  if (status & kReservedStatusMask) throw ReservedBitsSet("reserved status bits set");

  PhysicalReading r;
  r.accel_g.push_back(detail::get_accel(bytes, 1));
  r.valid.push_back(status & 0x01);
  std::size_t at = 7;
  for (int i = 1; i <= k; ++i) {
    r.accel_g.push_back(detail::get_accel(bytes, at));
    r.distance_mm.push_back(detail::get_u16(bytes, at + 6) * kDistanceLsbMm);
    r.valid.push_back((status >> i) & 0x01);
    at += 8;
  }
  return r;
}

inline std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char digits[] = "0123456789ABCDEF";
  std::string s;
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    if (i) s.push_back(' ');
    s.push_back(digits[bytes[i] >> 4]);
    s.push_back(digits[bytes[i] & 0xF]);
  }
  return s;
}

// Accepts hex pairs separated by arbitrary whitespace; '#' starts a comment.
inline Frame from_hex(std::string_view text) {
  Frame out;
  int pending = -1;
  bool comment = false;
  for (char c : text) {
    if (comment) {
      comment = c != '\n';
      continue;
    }
    if (c == '#') {
      comment = true;
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) continue;
    int v;
    if (c >= '0' && c <= '9') v = c - '0';
    else if (c >= 'a' && c <= 'f') v = c - 'a' + 10;
    else if (c >= 'A' && c <= 'F') v = c - 'A' + 10;
    else throw Error("HexError", std::string("invalid hex digit '") + c + "'");
    if (pending < 0) {
      pending = v;
    } else {
      out.push_back(static_cast<std::uint8_t>(pending << 4 | v));
      pending = -1;
    }
  }
  if (pending >= 0) throw Error("HexError", "odd number of hex digits");
  return out;
}

}  // namespace cpfen
