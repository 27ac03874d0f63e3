#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace condredact {

// Seed fan-out: every phase derives its stream from the global seed and a
// domain tag, so changing one phase's tag (or overriding one phase seed)
// never shifts another phase's stream.
std::uint64_t fnv1a64(std::string_view text);
std::uint64_t splitmix64(std::uint64_t state);
std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view domain);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t u64() { return engine_(); }

  // [0, 1)
  double uniform();
  double uniform(double lo, double hi);

  // inclusive on both ends
  int uniform_int(int lo, int hi);

  // standard normal via Box-Muller (pair cached)
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace condredact
