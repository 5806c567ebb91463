// Seeded counter-style RNG used by all stochastic modules. Streams are
// derived from a base seed by domain-tagged hashing so that, e.g., changing
// the walk horizon never perturbs the environment realization.
#pragma once

#include <cstdint>
#include <cstring>

namespace erw {

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline uint64_t fnv1a64(const char* s) {
  uint64_t h = 0xCBF29CE484222325ULL;
  for (; *s; ++s) {
    h ^= static_cast<uint64_t>(static_cast<unsigned char>(*s));
    h *= 0x100000001B3ULL;
  }
  return h;
}

// Stable stream-derivation function: seed(base, domain, index). Documented
// contract: this never changes between runs or versions of the tool.
inline uint64_t derive_seed(uint64_t base, const char* domain, uint64_t index) {
  uint64_t s = base ^ fnv1a64(domain);
  uint64_t h = splitmix64(s);
  s = h + 0x9E3779B97F4A7C15ULL * (index + 1);
  return splitmix64(s);
}

// xoshiro256++ (Blackman/Vigna), seeded via splitmix64.
class Xoshiro256pp {
 public:
  Xoshiro256pp() : Xoshiro256pp(0xDEADBEEFULL) {}
  explicit Xoshiro256pp(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& word : s_) word = splitmix64(sm);
  }

  uint64_t next() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform double in [0, 1).
  double next_double() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t s_[4];
};

}  // namespace erw
