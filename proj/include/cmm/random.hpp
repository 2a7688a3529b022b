#pragma once
#include <cstdint>

namespace cmm {

// Seed-derivation labels. Every stochastic subsystem owns a stream derived
// from the master seed and a stable label, so draw sequences do not depend on
// thread scheduling or on the order subsystems happen to be constructed in.
enum class StreamKind : std::uint64_t {
  scenario = 1,       // common-bias truth, shared scenario draws
  constellation = 2,  // satellite elevations
  vehicle = 3,        // per-vehicle measurement noise and filter draws
  link = 4,           // per directed link packet delivery
  fusion = 5,         // per-vehicle particle exchange sampling
  init = 6,           // initial states, trajectory selection and placement
};

// splitmix64 finalizer; also the mixing step for seed derivation.
std::uint64_t mix64(std::uint64_t z);

// Stream seed for (master, kind, a, b). Stable across runs and platforms.
std::uint64_t derive_seed(std::uint64_t master, StreamKind kind,
                          std::uint64_t a = 0, std::uint64_t b = 0);

// Deterministic generator with self-contained sampling (no library
// distributions, so sequences are identical across standard libraries).
// xoshiro256** core seeded via splitmix64.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed);

  std::uint64_t next_u64();
  double uniform01();  // [0, 1), 53-bit resolution
  double normal(double mean = 0.0, double sigma = 1.0);  // Marsaglia polar
  int uniform_int(int lo, int hi);  // inclusive bounds

 private:
  std::uint64_t s_[4];
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace cmm
