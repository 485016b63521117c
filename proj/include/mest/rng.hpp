#pragma once

// Counter-based random stream. Draw k of a stream with key s is a pure
// function mix(s + k·γ), so streams are reproducible across platforms and can
// be split by hashing the key with replicate coordinates.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace mest {

namespace detail {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Combines a master seed with stream coordinates (e.g. n and replicate).
constexpr std::uint64_t derive_seed(std::uint64_t master,
                                    std::initializer_list<std::uint64_t> coords) noexcept {
  std::uint64_t h = detail::mix64(master ^ 0x6A09E667F3BCC909ULL);
  for (std::uint64_t c : coords) {
    h = detail::mix64(h + detail::kGolden + detail::mix64(c + 0x3C6EF372FE94F82BULL));
  }
  return h;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) noexcept : key_(seed) {}

  std::uint64_t seed() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept {
    ++counter_;
    return detail::mix64(key_ + counter_ * detail::kGolden);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform on (0, 1).
  double uniform_open() noexcept {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal by the Box-Muller transform; both variates of a pair are
  /// used.
  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform_open();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(angle);
    has_spare_ = true;
    return r * std::cos(angle);
  }

  /// Independent child stream.
  Rng split(std::uint64_t index) const noexcept {
    return Rng(derive_seed(key_, {counter_, index}));
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace mest
