#pragma once

#include <cstdint>

namespace martrep {

/// splitmix64; fixed algorithm so that seeded runs are bit-identical across
/// platforms and standard-library versions.
class Prng {
 public:
  explicit Prng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform integer in [lo, hi] (inclusive); lo <= hi required.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
  }

  /// Uniform double in (0, 1]; never returns exactly 0.
  double uniform_unit() {
    const std::uint64_t bits = next_u64() >> 11;  // 53 bits
    return (static_cast<double>(bits) + 1.0) * 0x1.0p-53;
  }

  bool coin() { return (next_u64() & 1u) != 0; }

 private:
  std::uint64_t state_;
};

/// Derives an independent substream key; used for per-sample and per-instance
/// streams so that sharded runs merge identically for any shard count.
inline std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t index) {
  Prng g(seed ^ (0x9e3779b97f4a7c15ULL + index * 0xd1b54a32d192ed03ULL));
  return g.next_u64();
}

}  // namespace martrep
