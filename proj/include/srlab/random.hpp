#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace srlab {

/// Mixes a parent seed with a tag into an independent substream seed.
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag) noexcept;
std::uint64_t derive_seed(std::uint64_t parent, std::string_view tag) noexcept;

/// Seeded generator with platform-independent output. The standard
/// distributions are implementation-defined, so uniforms are built from raw bits.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). Requires n > 0.
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller on two uniforms.
  double normal();

 private:
  std::mt19937_64 engine_;
};

}  // namespace srlab
