#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace ddam {

/// SplitMix64 finalizer. Used for every seed derivation in the project.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// 64-bit FNV-1a over the bytes of a label.
constexpr std::uint64_t hash_label(std::string_view label) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Stable child seed for (seed, label, index):
///   mix64(mix64(seed ^ fnv1a(label)) + index)
/// Every subsystem seed is derived through this function, so one base seed
/// reproduces a whole run independent of evaluation order.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view label,
                                    std::uint64_t index = 0) noexcept {
  return mix64(mix64(seed ^ hash_label(label)) + index);
}

/// Uniform double in [0, 1) from the top 53 bits of a 64-bit word.
constexpr double to_unit(std::uint64_t bits) noexcept {
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

/// Counter-based uniform in [0, 1): a pure function of (key, a, b).
constexpr double counter_uniform(std::uint64_t key, std::uint64_t a, std::uint64_t b) noexcept {
  return to_unit(mix64(mix64(key + mix64(a)) ^ b));
}

/// Seeded random stream. Wraps mt19937_64; uniform and categorical draws are
/// computed from raw engine output so results do not depend on the standard
/// library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(mix64(seed)) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t next_u64() { return engine_(); }

  double uniform() { return to_unit(engine_()); }

  /// Uniform integer in [0, n). Lemire's nearly-divisionless rejection.
  std::uint64_t uniform_int(std::uint64_t n);

  /// Standard normal via Box-Muller (one value per call, no caching).
  double normal();

  bool bernoulli(double p) { return uniform() < p; }

  /// Child stream for (label, index); does not advance this stream.
  Rng derive(std::string_view label, std::uint64_t index = 0) const {
    return Rng(derive_seed(seed_, label, index));
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

/// Inverse-CDF categorical draw given u in [0,1). Falls back to the last
/// category with positive mass when rounding leaves u above the running sum.
std::size_t sample_categorical(std::span<const double> probs, double u);

}  // namespace ddam
