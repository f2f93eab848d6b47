#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace rescal {

// Deterministic counter-based generator (splitmix64). The state advances by a
// fixed odd constant per draw and the output is a bijective mix of the state,
// so identical seeds produce identical sequences on every platform.
//
// Reference sequence, seed 0: first outputs are
//   0xe220a8397b1dcdaf, 0x6e789e6aa1b965f4, 0x06c45d188009454f.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform double in [0, 1), 53 bits of precision.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform double in the open interval (0, 1); safe to pass through log().
  double uniform_open01() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  float uniform(float lo, float hi) {
    return lo + static_cast<float>(uniform01()) * (hi - lo);
  }

  // Standard Gumbel(0, 1) sample.
  double gumbel() { return -std::log(-std::log(uniform_open01())); }

  // Unbiased-enough index in [0, n) via 128-bit multiply-shift.
  uint64_t below(uint64_t n) {
    return static_cast<uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Derive an independent stream, e.g. one per model component.
  Rng fork(uint64_t salt) {
    Rng r(state_ ^ (0x9e3779b97f4a7c15ull * (salt + 1)));
    r.next_u64();
    return r;
  }

 private:
  uint64_t state_;
};

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i) {
    size_t j = static_cast<size_t>(rng.below(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace rescal
