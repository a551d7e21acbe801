#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "doctest.h"
#include "pearl/confidence.hpp"
#include "pearl/rng.hpp"

using namespace pearl;

namespace {

// Independent re-implementation of the two label rules, straight from their
// defining inequalities.
std::vector<std::uint8_t> reference_utility(const std::vector<double>& q, double u) {
  double q_max = q[0];
  for (double v : q) q_max = std::max(q_max, v);
  std::vector<std::uint8_t> out;
  for (double v : q)
    out.push_back(v >= q_max - (1.0 - u) * std::abs(q_max) ? 1 : 0);
  return out;
}

std::vector<std::uint8_t> reference_privacy(const std::vector<double>& mi, double p,
                                            double mi_max) {
  std::vector<std::uint8_t> out;
  for (double v : mi) out.push_back(mi_max == 0.0 || v < p * mi_max ? 1 : 0);
  return out;
}

std::vector<double> random_q(Rng& rng, int n) {
  std::vector<double> q(static_cast<std::size_t>(n));
  const double scale = std::pow(10.0, rng.uniform(-3.0, 3.0));
  const double shift = rng.chance(0.3) ? -scale * rng.uniform() * 2.0 : 0.0;
  for (double& v : q) v = rng.uniform(-1.0, 1.0) * scale + shift;
  return q;
}

bool grows(const std::vector<std::uint8_t>& small, const std::vector<std::uint8_t>& big) {
  for (std::size_t i = 0; i < small.size(); ++i)
    if (small[i] && !big[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("utility labels match the defining inequality on random inputs") {
  Rng rng(401);
  for (int trial = 0; trial < 3000; ++trial) {
    const auto q = random_q(rng, rng.uniform_int(1, 12));
    const double u = rng.uniform(0.05, 1.0);
    CHECK(utility_labels(q, u) == reference_utility(q, u));
  }
}

TEST_CASE("privacy labels match the defining inequality on random inputs") {
  Rng rng(402);
  for (int trial = 0; trial < 3000; ++trial) {
    const int n = rng.uniform_int(1, 12);
    std::vector<double> mi(static_cast<std::size_t>(n));
    for (double& v : mi) v = rng.uniform() * 3.0;
    const double mi_max = rng.chance(0.05) ? 0.0 : *std::max_element(mi.begin(), mi.end());
    const double p = rng.uniform(0.05, 1.0);
    CHECK(privacy_labels(mi, p, mi_max) == reference_privacy(mi, p, mi_max));
  }
}

TEST_CASE("documented spot values") {
  // q = [10, 7, 9.6], u = 0.95: threshold 10 - 0.05*10 = 9.5.
  const std::vector<double> q = {10.0, 7.0, 9.6};
  CHECK(utility_labels(q, 0.95) == std::vector<std::uint8_t>{1, 0, 1});
  // The branch attaining q_max always passes, any u.
  CHECK(utility_labels(q, 0.05)[0] == 1);
}

TEST_CASE("privacy rule is strict: a branch at exactly p*I_max fails") {
  const std::vector<double> mi = {0.7, 0.69999999, 1.0};
  CHECK(privacy_labels(mi, 0.7, 1.0) == std::vector<std::uint8_t>{0, 1, 0});
}

TEST_CASE("zero historical leakage passes every branch") {
  const std::vector<double> mi = {0.0, 0.0};
  CHECK(privacy_labels(mi, 0.5, 0.0) == std::vector<std::uint8_t>{1, 1});
}

TEST_CASE("lowering u never shrinks the eligible set") {
  Rng rng(403);
  for (int trial = 0; trial < 500; ++trial) {
    const auto q = random_q(rng, 8);
    std::vector<double> grid = {0.95, 0.85, 0.7, 0.5, 0.3, 0.1};
    for (std::size_t i = 1; i < grid.size(); ++i)
      CHECK(grows(utility_labels(q, grid[i - 1]), utility_labels(q, grid[i])));
  }
}

TEST_CASE("raising p never shrinks the eligible set") {
  Rng rng(404);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> mi(8);
    for (double& v : mi) v = rng.uniform() * 2.5;
    const double mi_max = *std::max_element(mi.begin(), mi.end());
    std::vector<double> grid = {0.1, 0.3, 0.5, 0.7, 0.9, 1.0};
    for (std::size_t i = 1; i < grid.size(); ++i)
      CHECK(grows(privacy_labels(mi, grid[i - 1], mi_max), privacy_labels(mi, grid[i], mi_max)));
  }
}

TEST_CASE("labels are invariant under positive rescaling") {
  Rng rng(405);
  for (int trial = 0; trial < 500; ++trial) {
    const auto q = random_q(rng, 6);
    const double u = rng.uniform(0.1, 1.0);
    for (double lambda : {1e-6, 0.37, 7.3, 1e6}) {
      std::vector<double> scaled = q;
      for (double& v : scaled) v *= lambda;
      CHECK(utility_labels(scaled, u) == utility_labels(q, u));
    }
    std::vector<double> mi(6);
    for (double& v : mi) v = rng.uniform() * 2.0;
    const double mi_max = *std::max_element(mi.begin(), mi.end());
    const double p = rng.uniform(0.1, 1.0);
    for (double lambda : {1e-6, 0.37, 7.3, 1e6}) {
      std::vector<double> scaled = mi;
      for (double& v : scaled) v *= lambda;
      CHECK(privacy_labels(scaled, p, mi_max * lambda) == privacy_labels(mi, p, mi_max));
    }
  }
}

TEST_CASE("all-negative q values keep a nonempty eligible set") {
  Rng rng(406);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> q(5);
    for (double& v : q) v = -rng.uniform(0.1, 100.0);
    const auto labels = utility_labels(q, rng.uniform(0.05, 1.0));
    CHECK(std::count(labels.begin(), labels.end(), 1) >= 1);
  }
}

TEST_CASE("budget validation rejects out-of-range values") {
  BudgetConfig ok;
  CHECK_NOTHROW(ok.validate());
  BudgetConfig bad_u;
  bad_u.u = 0.0;
  CHECK_THROWS(bad_u.validate());
  BudgetConfig bad_p;
  bad_p.p = 1.5;
  CHECK_THROWS(bad_p.validate());
  BudgetConfig bad_v;
  bad_v.v = -0.1;
  CHECK_THROWS(bad_v.validate());
}

namespace {

// Small synthetic buffers: 3 branches, hand-set raw material.
ConfidenceBuffers synthetic_buffers() {
  ConfidenceBuffers b;
  b.branch_count = 3;
  // Four utility records; branch q maxima chosen so branch 0 dominates,
  // branch 1 is borderline, branch 2 is poor.
  b.record_q = {{10.0, 8.0, 2.0}, {10.0, 9.9, 2.0}, {8.0, 7.0, 1.0}, {12.0, 9.0, 3.0}};
  for (std::size_t i = 0; i < b.record_q.size(); ++i) b.utility.push_back({{0.0}, 0, {}});
  // Two windows of per-branch MI; branch 2 is the leakiest.
  b.window_mi = {{0.5, 1.0, 2.0}, {0.6, 1.1, 2.2}};
  b.window_start = {0, 4};
  b.i_max = 2.2;
  // Two privacy records per window.
  for (int w = 0; w < 2; ++w)
    for (int r = 0; r < 2; ++r) {
      b.privacy.push_back({{0.0}, 0, {}});
      b.privacy_window.push_back(w);
    }
  return b;
}

}  // namespace

TEST_CASE("relabeling recomputes both label sets from the stored material") {
  ConfidenceBuffers b = synthetic_buffers();
  BudgetConfig budgets;
  budgets.u = 0.8;
  budgets.p = 0.7;
  relabel_buffers(b, budgets);
  for (std::size_t r = 0; r < b.utility.size(); ++r)
    CHECK(b.utility[r].ucl == reference_utility(b.record_q[r], 0.8));
  for (std::size_t r = 0; r < b.privacy.size(); ++r) {
    const auto& mi = b.window_mi[static_cast<std::size_t>(b.privacy_window[r])];
    CHECK(b.privacy[r].pcl == reference_privacy(mi, 0.7, b.i_max));
  }
}

TEST_CASE("eligible branches need majority-1 in both buffers") {
  ConfidenceBuffers b = synthetic_buffers();
  BudgetConfig budgets;
  budgets.u = 0.8;  // thresholds: branch 0 passes everywhere; branch 1 in 3/4
  budgets.p = 0.7;  // p*I_max = 1.54: branches 0,1 pass, branch 2 fails
  relabel_buffers(b, budgets);
  const auto eligible = eligible_branches(b);
  CHECK(std::find(eligible.begin(), eligible.end(), 0) != eligible.end());
  CHECK(std::find(eligible.begin(), eligible.end(), 2) == eligible.end());

  // Loosen both budgets: the set can only grow.
  BudgetConfig loose;
  loose.u = 0.3;
  loose.p = 1.0;
  ConfidenceBuffers b2 = synthetic_buffers();
  relabel_buffers(b2, loose);
  const auto wide = eligible_branches(b2);
  for (int br : eligible) CHECK(std::find(wide.begin(), wide.end(), br) != wide.end());
}
