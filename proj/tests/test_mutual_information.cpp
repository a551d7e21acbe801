#include <cmath>
#include <map>
#include <utility>
#include <vector>

#include "doctest.h"
#include "pearl/mutual_information.hpp"
#include "pearl/rng.hpp"

using namespace pearl;

namespace {

// Independent plug-in MI oracle: dense joint histogram, direct definition.
double brute_force_mi(const std::vector<std::pair<int, int>>& window) {
  const double n = static_cast<double>(window.size());
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> ps, pa;
  for (const auto& [s, a] : window) {
    joint[{s, a}] += 1.0;
    ps[s] += 1.0;
    pa[a] += 1.0;
  }
  double bits = 0.0;
  for (const auto& [sa, c] : joint) {
    const double pxy = c / n;
    const double px = ps[sa.first] / n;
    const double py = pa[sa.second] / n;
    bits += pxy * std::log2(pxy / (px * py));
  }
  return bits;
}

std::vector<std::pair<int, int>> random_window(Rng& rng, int len, int s_card, int a_card,
                                               double coupling) {
  std::vector<std::pair<int, int>> w;
  w.reserve(static_cast<std::size_t>(len));
  for (int i = 0; i < len; ++i) {
    const int s = rng.uniform_int(0, s_card - 1);
    const int a = rng.chance(coupling) ? s % a_card : rng.uniform_int(0, a_card - 1);
    w.emplace_back(s, a);
  }
  return w;
}

}  // namespace

TEST_CASE("estimator equals a brute-force histogram on random windows") {
  Rng rng(301);
  for (int trial = 0; trial < 300; ++trial) {
    const int len = rng.uniform_int(2, 400);
    const int s_card = rng.uniform_int(1, 12);
    const int a_card = rng.uniform_int(1, 12);
    const auto w = random_window(rng, len, s_card, a_card, rng.uniform());
    CHECK(std::abs(mutual_information(w) - brute_force_mi(w)) <= 1e-12);
  }
}

TEST_CASE("identical variables leak their full entropy") {
  // s == a uniform over k symbols: MI = log2(k) exactly once every symbol
  // appears equally often.
  std::vector<std::pair<int, int>> w;
  for (int rep = 0; rep < 10; ++rep)
    for (int v = 0; v < 8; ++v) w.emplace_back(v, v);
  CHECK(mutual_information(w) == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("independent variables carry zero information") {
  // Balanced product design: empirical joint factorizes exactly.
  std::vector<std::pair<int, int>> w;
  for (int s = 0; s < 4; ++s)
    for (int a = 0; a < 5; ++a)
      for (int rep = 0; rep < 3; ++rep) w.emplace_back(s, a);
  CHECK(mutual_information(w) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("estimator converges to the analytic value of a synthetic joint") {
  // p(s) uniform over 4; a = s with prob 0.75, else uniform over 4.
  // p(a|s): 0.75 + 0.0625 on the diagonal, 0.0625 off it.
  const double diag = 0.75 + 0.25 / 4.0;
  const double off = 0.25 / 4.0;
  const double analytic =
      diag * std::log2(diag / 0.25) + 3.0 * off * std::log2(off / 0.25);
  Rng rng(302);
  std::vector<std::pair<int, int>> w;
  for (int i = 0; i < 10000; ++i) {
    const int s = rng.uniform_int(0, 3);
    const int a = rng.chance(0.75) ? s : rng.uniform_int(0, 3);
    w.emplace_back(s, a);
  }
  CHECK(std::abs(mutual_information(w) - analytic) < 0.05);
}

TEST_CASE("mi is symmetric under swapping the two series") {
  Rng rng(303);
  auto w = random_window(rng, 250, 6, 9, 0.5);
  std::vector<std::pair<int, int>> swapped;
  for (const auto& [s, a] : w) swapped.emplace_back(a, s);
  CHECK(mutual_information(w) == doctest::Approx(mutual_information(swapped)).epsilon(1e-12));
}

TEST_CASE("mi is invariant under relabeling symbols") {
  Rng rng(304);
  auto w = random_window(rng, 300, 5, 5, 0.6);
  std::vector<std::pair<int, int>> relabeled;
  for (const auto& [s, a] : w) relabeled.emplace_back(17 + 3 * s, 100 - a);
  CHECK(mutual_information(w) ==
        doctest::Approx(mutual_information(relabeled)).epsilon(1e-12));
}

TEST_CASE("mi is non-negative and bounded by min entropy") {
  Rng rng(305);
  for (int trial = 0; trial < 50; ++trial) {
    auto w = random_window(rng, rng.uniform_int(5, 200), 4, 7, rng.uniform());
    const double mi = mutual_information(w);
    CHECK(mi >= 0.0);
    CHECK(mi <= std::log2(7.0) + 1e-12);
  }
}

TEST_CASE("shuffled pairing destroys the information") {
  Rng rng(306);
  std::vector<std::pair<int, int>> w;
  for (int i = 0; i < 2000; ++i) {
    const int s = rng.uniform_int(0, 7);
    w.emplace_back(s, s);
  }
  std::vector<int> actions;
  for (auto& [s, a] : w) actions.push_back(a);
  double total = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    rng.shuffle(actions);
    auto shuffled = w;
    for (std::size_t i = 0; i < shuffled.size(); ++i) shuffled[i].second = actions[i];
    total += mutual_information(shuffled);
  }
  CHECK(total / 20.0 < 0.1);
}

TEST_CASE("miller-madow adds the analytic bias term") {
  // Correction: (|S||A| - |S| - |A| + 1) / (2 N ln 2) with observed supports.
  std::vector<std::pair<int, int>> w;
  for (int rep = 0; rep < 5; ++rep)
    for (int v = 0; v < 4; ++v) w.emplace_back(v, v);  // support: 4 s, 4 a, 4 joint
  const double raw = mutual_information(w, false);
  const double corrected = mutual_information(w, true);
  const double expect = (4.0 - 4.0 - 4.0 + 1.0) / (2.0 * 20.0 * std::log(2.0));
  CHECK(corrected - raw == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("window series splits the trace without overlap and drops the tail") {
  ActionTrace trace;
  trace.state_count = 4;
  trace.action_count = 4;
  // 2.5 windows of 10 -> exactly 2 points, starts at t=0 and t=10.
  for (int t = 0; t < 25; ++t) trace.append(t, t % 4, (t / 2) % 4, 0);
  const MISeries series = mi_series(trace, {10, false});
  REQUIRE(series.points.size() == 2);
  CHECK(series.points[0].window_start == 0);
  CHECK(series.points[1].window_start == 10);

  std::vector<std::pair<int, int>> w0, w1;
  for (int t = 0; t < 10; ++t) w0.emplace_back(t % 4, (t / 2) % 4);
  for (int t = 10; t < 20; ++t) w1.emplace_back(t % 4, (t / 2) % 4);
  CHECK(series.points[0].bits == doctest::Approx(brute_force_mi(w0)).epsilon(1e-12));
  CHECK(series.points[1].bits == doctest::Approx(brute_force_mi(w1)).epsilon(1e-12));
}

TEST_CASE("a trace of exactly one window yields one point") {
  ActionTrace trace;
  trace.state_count = 2;
  trace.action_count = 2;
  for (int t = 0; t < 8; ++t) trace.append(t, t % 2, t % 2, 0);
  const MISeries series = mi_series(trace, {8, false});
  REQUIRE(series.points.size() == 1);
  CHECK(series.points[0].bits == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(series.i_max == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("i_max_so_far is the running maximum across points") {
  Rng rng(307);
  ActionTrace trace;
  trace.state_count = 6;
  trace.action_count = 6;
  for (int t = 0; t < 500; ++t) {
    const int s = rng.uniform_int(0, 5);
    const int a = rng.chance(0.5) ? s : rng.uniform_int(0, 5);
    trace.append(t, s, a, 0);
  }
  const MISeries series = mi_series(trace, {50, false});
  double running = 0.0;
  for (const auto& pt : series.points) {
    running = std::max(running, pt.bits);
    CHECK(pt.i_max_so_far == doctest::Approx(running).epsilon(1e-12));
  }
  CHECK(series.i_max == doctest::Approx(running).epsilon(1e-12));
}

TEST_CASE("per-branch series windows each branch separately") {
  ActionTrace trace;
  trace.state_count = 2;
  trace.action_count = 2;
  // Branch 0: perfectly coupled; branch 1: constant action (zero MI).
  for (int t = 0; t < 40; ++t) {
    if (t % 2 == 0)
      trace.append(t, t % 4 / 2, t % 4 / 2, 0);
    else
      trace.append(t, t % 4 / 2, 0, 1);
  }
  const MISeries series = mi_series(trace, {10, false}, true);
  REQUIRE(series.points.size() == 4);  // 20 entries per branch / 10
  for (const auto& pt : series.points) {
    if (pt.branch == 0) CHECK(pt.bits > 0.9);
    if (pt.branch == 1) CHECK(pt.bits == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("trace validation rejects malformed input") {
  ActionTrace bad;
  bad.state_count = 2;
  bad.action_count = 2;
  bad.append(5, 0, 0, 0);
  bad.append(3, 1, 1, 0);  // decreasing t
  CHECK_THROWS(bad.validate());

  ActionTrace out_of_range;
  out_of_range.state_count = 2;
  out_of_range.action_count = 2;
  out_of_range.append(0, 2, 0, 0);  // s_id == state_count
  CHECK_THROWS(out_of_range.validate());
}
