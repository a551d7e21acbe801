#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <vector>

#include "doctest.h"
#include "pearl/rng.hpp"

using pearl::Rng;

TEST_CASE("same seed reproduces the exact sequence") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("different seeds diverge") {
  Rng a(1), b(2);
  int equal = 0;
  for (int i = 0; i < 64; ++i) equal += (a.next_u64() == b.next_u64());
  CHECK(equal == 0);
}

TEST_CASE("substreams are independent of parent draw order") {
  Rng parent(7);
  Rng sub_before = parent.substream("replay");
  parent.next_u64();
  parent.uniform();
  Rng sub_after = parent.substream("replay");
  for (int i = 0; i < 16; ++i) CHECK(sub_before.next_u64() == sub_after.next_u64());
}

TEST_CASE("substream labels and indices separate streams") {
  Rng parent(7);
  CHECK(parent.substream("a").next_u64() != parent.substream("b").next_u64());
  CHECK(parent.substream("a", 0).next_u64() != parent.substream("a", 1).next_u64());
}

TEST_CASE("uniform lies in [0,1) and fills the range") {
  Rng rng(3);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double x = rng.uniform();
    REQUIRE(x >= 0.0);
    REQUIRE(x < 1.0);
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  CHECK(lo < 0.01);
  CHECK(hi > 0.99);
}

TEST_CASE("uniform_int is unbiased within 3 sigma") {
  Rng rng(11);
  const int k = 7, n = 70000;
  std::vector<int> counts(k, 0);
  for (int i = 0; i < n; ++i) {
    const int v = rng.uniform_int(0, k - 1);
    REQUIRE(v >= 0);
    REQUIRE(v < k);
    ++counts[v];
  }
  const double expected = static_cast<double>(n) / k;
  const double sigma = std::sqrt(expected * (1.0 - 1.0 / k));
  for (int c : counts) CHECK(std::abs(c - expected) < 3.0 * sigma);
}

TEST_CASE("normal has the requested moments") {
  Rng rng(5);
  const int n = 200000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal(2.0, 3.0);
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(mean == doctest::Approx(2.0).epsilon(0.02));
  CHECK(std::sqrt(var) == doctest::Approx(3.0).epsilon(0.02));
}

TEST_CASE("chance respects the probability") {
  Rng rng(9);
  int hits = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) hits += rng.chance(0.3);
  CHECK(std::abs(hits / static_cast<double>(n) - 0.3) < 3.0 * std::sqrt(0.3 * 0.7 / n));
}

TEST_CASE("shuffle yields a permutation and moves elements") {
  Rng rng(13);
  std::vector<int> v(100);
  std::iota(v.begin(), v.end(), 0);
  const std::vector<int> orig = v;
  rng.shuffle(v);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == orig);
  CHECK(v != orig);
}
