#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace cpfen {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Base for every error raised by the library. `code()` is a stable,
// machine-readable identifier; `what()` carries the human message.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

// splitmix64 finalizer; used to derive independent RNG streams.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// FNV-1a, stable across platforms and runs.
constexpr std::uint64_t fnv1a(std::string_view text) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

// Seed for a per-entity random stream: depends only on (seed, name, salt),
// never on iteration order over the topology.
constexpr std::uint64_t stream_seed(std::uint64_t seed, std::string_view name,
                                    std::uint64_t salt = 0) noexcept {
  return mix64(seed ^ mix64(fnv1a(name) + salt));
}

}  // namespace cpfen
