#pragma once

#include <cstdint>
#include <random>

namespace trialign {

// splitmix64; used to derive independent substream seeds from a master seed.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t master, uint64_t tag) {
  return splitmix64(master ^ splitmix64(tag));
}

inline uint64_t derive_seed(uint64_t master, uint64_t tag, uint64_t sub) {
  return splitmix64(derive_seed(master, tag) ^ splitmix64(sub + 0x51ed2701ULL));
}

using RngEngine = std::mt19937_64;

inline RngEngine make_rng(uint64_t seed) { return RngEngine(seed); }

inline double uniform(RngEngine& rng, double lo = 0.0, double hi = 1.0) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double gauss(RngEngine& rng, double mean = 0.0, double stddev = 1.0) {
  return std::normal_distribution<double>(mean, stddev)(rng);
}

inline int uniform_int(RngEngine& rng, int lo, int hi) {  // inclusive bounds
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

}  // namespace trialign
