#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace pearl {

// Deterministic PRNG (xoshiro256++) with named substreams.
//
// Every stochastic component takes one of these instead of std::mt19937 so
// that runs are byte-identical across standard libraries and platforms.
// Substreams are derived from the parent seed and a label, so reordering
// unrelated draws in one component cannot perturb another.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  // Independent generator for a named component, e.g. rng.substream("replay").
  Rng substream(std::string_view label) const;
  // Numbered variant for per-index streams (episodes, restarts, ...).
  Rng substream(std::string_view label, std::uint64_t index) const;

  std::uint64_t next_u64();

  // Uniform on [0, 1) with 53-bit resolution.
  double uniform();
  // Uniform on [lo, hi).
  double uniform(double lo, double hi);
  // Uniform integer on [lo, hi] inclusive, rejection-sampled (no modulo bias).
  int uniform_int(int lo, int hi);
  // Bernoulli(p).
  bool chance(double p);
  // Standard normal via Box-Muller; second draw of each pair is cached.
  double normal();
  double normal(double mean, double stddev);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(0, static_cast<int>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t s_[4] = {};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace pearl
