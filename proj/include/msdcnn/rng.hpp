#pragma once

#include <cstdint>
#include <string_view>

namespace msdcnn {

// splitmix64 step: cheap, well-mixed, and stable across platforms.  All
// deterministic seeding in the library bottoms out here.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Independent stream for a named consumer (e.g. one network parameter).
// Depends only on the root seed and the name, so adding parameters to a
// model never shifts the draws of the ones that already existed.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) {
  return splitmix64(seed ^ fnv1a64(stream));
}

// Independent stream for an indexed consumer (e.g. one training step).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(seed ^ splitmix64(index ^ 0x8e51'ecee'c6b3'f9b1ULL));
}

// Counter-based generator over splitmix64.  Deterministic for a given seed
// regardless of call-site interleaving elsewhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64(state_++); }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Standard normal via Box-Muller; one call consumes two draws.
  double next_normal();

  // Uniform integer in [0, n); n must be positive.
  std::uint64_t next_below(std::uint64_t n);

 private:
  std::uint64_t state_;
};

}  // namespace msdcnn
