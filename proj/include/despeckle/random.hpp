#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace despeckle {

// Mixes a sequence of integers into one 64-bit seed (splitmix64 chain).
std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts);

// Platform-independent generator: the std:: engines have a fixed sequence,
// but std:: distributions do not, so all transforms are written out here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Uniform on (0, 1].
  double uniform_open0() { return 1.0 - uniform(); }
  double exponential();
  double normal();
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace despeckle
