#pragma once

#include <array>
#include <cstdint>

namespace proxigmm {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter, std::array<std::uint32_t, 2> key);

/// Seed of replication r under base_seed; stable across platforms.
std::uint64_t derive_seed(std::uint64_t base_seed, std::uint64_t replication);

/// Random variates addressed by (seed, stream, index); draws do not depend on
/// evaluation order.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

  /// Uniform on the open interval (0, 1) with 53 random bits.
  double uniform(std::uint32_t stream, std::uint64_t index) const;
  /// Standard normal by inverse CDF of uniform().
  double normal(std::uint32_t stream, std::uint64_t index) const;

 private:
  std::uint64_t seed_;
};

}  // namespace proxigmm
