#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace qdq {

// splitmix64 step; also the stream-derivation mixer.
inline std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9E3779B97F4A7C15ull;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// compile-time FNV-1a for stream tags
constexpr std::uint64_t tag_hash(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

// xoshiro256++ with Box-Muller normals. All randomness in the toolkit flows
// through this engine so artifacts do not depend on the C++ stdlib's
// distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& w : s_) w = splitmix64(x);
    have_spare_ = false;
    spare_ = 0.0;
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  std::uint64_t uniform_index(std::uint64_t n) {
    // modulo bias is < 2^-53 for the sizes used here; keep it simple
    return next_u64() % n;
  }

  // standard normal via Box-Muller, second value cached
  double normal();

  double normal(double mean, double std) { return mean + std * normal(); }

  // serialization for exact-resume checkpoints
  void state(std::uint64_t out[4]) const {
    for (int i = 0; i < 4; ++i) out[i] = s_[i];
  }
  void set_state(const std::uint64_t in[4]) {
    for (int i = 0; i < 4; ++i) s_[i] = in[i];
    have_spare_ = false;
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::uint64_t s_[4];
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Deterministic sub-stream derivation: the same (seed, ids...) always yields
// the same engine, independent of any other stream's consumption.
inline Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> ids) {
  std::uint64_t h = seed;
  (void)splitmix64(h);
  for (std::uint64_t id : ids) {
    h ^= id + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
    (void)splitmix64(h);
  }
  return Rng(h);
}

inline Rng derive_rng(std::uint64_t seed, std::uint64_t a) { return derive_rng(seed, {a}); }
inline Rng derive_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return derive_rng(seed, {a, b});
}
inline Rng derive_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return derive_rng(seed, {a, b, c});
}

}  // namespace qdq
