#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

namespace qlr {

/// Seeded generator with a fixed, platform-independent recipe:
///   raw bits      std::mt19937_64 (output fully specified by the standard)
///   uniform(0,1]  (x >> 11) * 2^-53, mapped to 1 - u
///   normal        Box-Muller, cosine branch first, sine branch cached
///   index < n     rejection sampling on the raw 64-bit stream
/// std::*_distribution is avoided because its output is implementation-defined.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  double uniform();
  double normal();
  std::uint64_t below(std::uint64_t n);

  /// `count` distinct values from [0, n) by partial Fisher-Yates, in draw order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count);

private:
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

/// Decorrelated child seed (splitmix64 finaliser of seed + stream).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

} // namespace qlr
