#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace normap {

/// Counter-based generator: the k-th draw of stream `key` is a pure function
/// of (key, k), so streams can be split per subject or per voxel without
/// sharing state and the output does not depend on evaluation order.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key, std::uint64_t counter = 0) noexcept
      : key_(mix(key ^ 0x243F6A8885A308D3ULL)), counter_(counter) {}

  static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Derives an independent stream key from a parent key and an index.
  static constexpr std::uint64_t split(std::uint64_t key, std::uint64_t index) noexcept {
    return mix(mix(key) ^ mix(index + 0x632BE59BD9B4E019ULL));
  }

  std::uint64_t at(std::uint64_t counter) const noexcept {
    return mix(key_ ^ mix(counter * 0xD1B54A32D192ED03ULL + 1));
  }

  std::uint64_t next_u64() noexcept { return at(counter_++); }

  /// Uniform on the open interval (0, 1).
  double uniform() noexcept {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// A pair of independent standard normals (Box-Muller).
  void normal_pair(double& a, double& b) noexcept {
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * std::numbers::pi * u2;
    a = r * std::cos(t);
    b = r * std::sin(t);
  }

  std::uint64_t counter() const noexcept { return counter_; }
  void seek(std::uint64_t counter) noexcept { counter_ = counter; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

}  // namespace normap
