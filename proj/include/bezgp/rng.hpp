#pragma once

#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "bezgp/errors.hpp"

namespace bezgp {

// Deterministic random source. The engine (mt19937_64) has a standardized
// output sequence, and the mapping to doubles below is spelled out explicitly,
// so identical seeds give bit-identical draws on every platform. The standard
// distributions (std::uniform_real_distribution etc.) are deliberately avoided
// because their output is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // Uniform on [0, 1): top 53 bits of the engine output scaled by 2^-53.
  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [0, n).
  int below(int n) {
    if (n < 1) throw InvalidArgument("Rng::below requires n >= 1");
    int k = static_cast<int>(uniform01() * static_cast<double>(n));
    return k < n ? k : n - 1;
  }

  // Fisher-Yates shuffle of 0..n-1.
  std::vector<int> permutation(int n) {
    std::vector<int> p(static_cast<std::size_t>(n));
    std::iota(p.begin(), p.end(), 0);
    for (int i = n - 1; i > 0; --i) std::swap(p[static_cast<std::size_t>(i)],
                                              p[static_cast<std::size_t>(below(i + 1))]);
    return p;
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace bezgp
