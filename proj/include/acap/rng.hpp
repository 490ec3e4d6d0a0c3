// Copyright 2026 the acap authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef ACAP_RNG_HPP
#define ACAP_RNG_HPP

#include <cmath>
#include <cstdint>
#include <string_view>

namespace acap {

namespace detail {

inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace detail

// Deterministic PRNG, splittable by name. Every random decision in a run
// (weight init, SpecAugment, shuffling, toy-corpus synthesis) draws from a
// stream derived from one root seed, so streams are independent of the
// order in which other streams are created or used.
class Rng {
 public:
  explicit Rng(uint64_t seed) : base_(seed), state_(seed) {
    // decorrelate trivially related seeds
    (void)detail::splitmix64(state_);
  }

  uint64_t seed() const { return base_; }

  // Child stream keyed on (base seed, name). Splitting does not consume
  // state from this stream.
  Rng split(std::string_view name) const {
    uint64_t child = base_ ^ (detail::fnv1a64(name) + 0x9e3779b97f4a7c15ull +
                              (base_ << 6) + (base_ >> 2));
    return Rng(child);
  }

  uint64_t next_u64() { return detail::splitmix64(state_); }

  // [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // inclusive on both ends
  int uniform_int(int lo, int hi) {
    if (hi <= lo) return lo;
    uint64_t range = static_cast<uint64_t>(hi) - static_cast<uint64_t>(lo) + 1;
    return lo + static_cast<int>(next_u64() % range);
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    // Box-Muller, no cached spare: one value per two uniforms keeps the
    // stream position a pure function of call count.
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    return mean + stddev * z;
  }

  // Normal clipped to +/- 2 stddev by rejection.
  double trunc_normal(double stddev) {
    for (;;) {
      double z = normal(0.0, stddev);
      if (std::fabs(z) <= 2.0 * stddev) return z;
    }
  }

 private:
  uint64_t base_;
  uint64_t state_;
};

}  // namespace acap

#endif  // ACAP_RNG_HPP
