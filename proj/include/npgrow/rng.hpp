#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "npgrow/tensor.hpp"

namespace npgrow {

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Combines a seed with stream identifiers into a new seed. Used to derive
// per-subject / per-batch-item RNGs that are independent of thread schedule.
uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0);

// xoshiro256** with explicit state so results are identical on every
// platform and standard library. Normal draws use Box-Muller without a
// cached spare, keeping the state exactly four words.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0);

  uint64_t next_u64();
  // Uniform in [0, 1), 53-bit resolution.
  double uniform();
  double uniform(double lo, double hi);
  // Uniform integer in [0, n).
  int64_t below(int64_t n);
  // Uniform integer in [lo, hi] inclusive.
  int64_t range(int64_t lo, int64_t hi);
  double normal();
  double normal(double mu, double sigma);

  void fill_normal(Tensor& t, double mu = 0.0, double sigma = 1.0);
  Tensor normal_tensor(Shape shape, double mu = 0.0, double sigma = 1.0);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
      int64_t j = below(i + 1);
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
    }
  }

  std::array<uint64_t, 4> state() const { return s_; }
  void set_state(const std::array<uint64_t, 4>& s) { s_ = s; }

 private:
  std::array<uint64_t, 4> s_{};
};

}  // namespace npgrow
