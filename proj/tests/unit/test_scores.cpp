#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "disagree/error.hpp"
#include "disagree/rng.hpp"
#include "disagree/scores.hpp"
#include "helpers.hpp"

using namespace disagree;
using doctest::Approx;

namespace {

EnsembleTrace one_cell(std::vector<double> logits, int label) {
  EnsembleTrace t(1, 1, {label}, static_cast<int>(logits.size()), true);
  t.set_logits(0, 0, 0, logits);
  return t;
}

EnsembleTrace random_logit_trace(int e, int n, int m, int c, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<int> labels(m);
  for (auto& y : labels) y = static_cast<int>(rng.below(c));
  EnsembleTrace t(e, n, labels, c, true);
  std::vector<double> l(c);
  for (int a = 0; a < e; ++a)
    for (int i = 0; i < n; ++i)
      for (int x = 0; x < m; ++x) {
        for (auto& v : l) v = 2.0 * rng.normal();
        t.set_logits(a, i, x, l);
      }
  return t;
}

// W1 between two pmfs on {0..n}*h by coupling their quantile functions:
// walk both CDFs in lockstep and pay |x - y| for each slice of probability.
double w1_quantile_coupling(std::vector<double> p, std::vector<double> q, double h) {
  std::size_t i = 0, j = 0;
  double cost = 0.0;
  while (i < p.size() && j < q.size()) {
    if (p[i] <= 1e-15) { ++i; continue; }
    if (q[j] <= 1e-15) { ++j; continue; }
    const double mass = std::min(p[i], q[j]);
    cost += mass * std::abs(static_cast<double>(i) - static_cast<double>(j)) * h;
    p[i] -= mass;
    q[j] -= mass;
  }
  return cost;
}

}  // namespace

TEST_CASE("tpa counts agreeing models") {
  auto t = testing::trace_from_bits(1, 4, {0, 1, 2}, 3, {1, 1, 0,  1, 1, 0,  1, 0, 0,  1, 1, 0});
  CHECK(tpa(t, 0, 0) == 1.0);
  CHECK(tpa(t, 0, 1) == 0.75);
  CHECK(tpa(t, 0, 2) == 0.0);
  CHECK_THROWS_AS(tpa(t, 1, 0), ArgumentError);
  CHECK_THROWS_AS(tpa(t, 0, 3), ArgumentError);
}

TEST_CASE("elp examples") {
  // N=2, three epochs: [0,0], [1,0], [1,1]
  auto t = testing::trace_from_bits(3, 2, {0}, 2, {0, 0, 1, 0, 1, 1});
  CHECK(elp(t)[0] == Approx(0.5));
  auto all = testing::trace_from_bits(2, 3, {1}, 2, std::vector<int>(6, 1));
  CHECK(elp(all)[0] == 1.0);

  t.set_epoch_set({});
  CHECK_THROWS_AS(elp(t), ArgumentError);
}

TEST_CASE("staggered learning gives lower elp than simultaneous") {
  const int n = 10, e = 20;
  std::vector<int> together(e * n), staggered(e * n);
  for (int a = 0; a < e; ++a)
    for (int i = 0; i < n; ++i) {
      together[a * n + i] = a >= e / 2;
      staggered[a * n + i] = a >= e / 2 + i;
    }
  const double t = elp(testing::trace_from_bits(e, n, {0}, 2, together))[0];
  const double s = elp(testing::trace_from_bits(e, n, {0}, 2, staggered))[0];
  // brute-force counts: 10*10 vs sum_i max(0, 10 - i)
  CHECK(t == Approx(100.0 / 200.0));
  CHECK(s == Approx(55.0 / 200.0));
  CHECK(s < t);
}

TEST_CASE("cum_loss examples") {
  CHECK(cum_loss(one_cell({0.0, 0.0}, 0))[0] == Approx(std::log(2.0)));
  CHECK(cum_loss(one_cell({40.0, 0.0, 0.0}, 0))[0] < 1e-6);

  // CE 0.2 and 0.6 with two classes: logit gap g has CE = log(1 + exp(-g))
  EnsembleTrace t(2, 1, {0}, 2, true);
  for (int e = 0; e < 2; ++e) {
    const double ce = e == 0 ? 0.2 : 0.6;
    const std::vector<double> l{-std::log(std::exp(ce) - 1.0), 0.0};
    t.set_logits(e, 0, 0, l);
  }
  CHECK(cum_loss(t)[0] == Approx(0.4));

  auto bits = testing::trace_from_bits(1, 1, {0}, 2, {1});
  CHECK_THROWS_AS(cum_loss(bits), FidelityError);
  CHECK_THROWS_AS(mean_margin(bits), FidelityError);
  CHECK_THROWS_AS(logits_mean(bits), FidelityError);
  CHECK_FALSE(compute_scores(bits).cum_loss.has_value());
}

TEST_CASE("mean_margin examples") {
  CHECK(mean_margin(one_cell({2.0, 0.5, -1.0}, 0))[0] == Approx(1.5));
  CHECK(mean_margin(one_cell({2.0, 0.5, -1.0}, 1))[0] == Approx(-1.5));
  CHECK(mean_margin(one_cell({0.7, 0.7, 0.7}, 2))[0] == 0.0);
  CHECK_THROWS_AS(mean_margin(one_cell({1.0}, 0)), ArgumentError);
}

TEST_CASE("lm examples") {
  CHECK(logits_mean(one_cell({60.0, 0.0}, 0))[0] == Approx(1.0));
  // p_y = 0.3 with two classes: logit gap log(0.3/0.7)
  CHECK(logits_mean(one_cell({std::log(0.3 / 0.7), 0.0}, 0))[0] == Approx(0.3));

  EnsembleTrace t(1, 2, {0}, 2, true);
  const std::vector<double> a{std::log(0.2 / 0.8), 0.0}, b{std::log(0.8 / 0.2), 0.0};
  t.set_logits(0, 0, 0, a);
  t.set_logits(0, 1, 0, b);
  CHECK(logits_mean(t)[0] == Approx(0.5));
}

TEST_CASE("bi examples") {
  auto all = testing::trace_from_bits(1, 3, {0, 1}, 2, std::vector<int>(6, 1));
  CHECK(bi_series(all).bi[0] == Approx(1.0));

  // TPA {1, 1, 0, 0.5} with N=2
  auto t = testing::trace_from_bits(1, 2, {0, 0, 0, 0}, 2, {1, 1, 0, 1,  1, 1, 0, 0});
  CHECK(bi_series(t).bi[0] == Approx(std::sqrt(0.5) + 0.5));
  CHECK(bi_series(t).bi[0] == Approx(1.2071).epsilon(1e-4));

  auto split = testing::trace_from_bits(1, 2, {0, 0}, 2, {1, 0, 1, 0});
  CHECK(bi_series(split).bi[0] == Approx(std::sqrt(2.0)));

  // argmax with ties keeps the first epoch
  auto ties = testing::trace_from_bits(3, 1, {0, 0}, 2, {1, 0, 1, 1, 0, 1});
  CHECK(bi_series(ties).max_bi_epoch == 0);
  CHECK(epochs_through_max_bi(ties) == std::vector<int>{0});
}

TEST_CASE("exhaustive small traces: elp, tpa, bi and monotonicity") {
  const std::vector<std::array<int, 3>> shapes{{1, 1, 1}, {2, 2, 3}, {3, 2, 2}, {2, 3, 2}, {1, 4, 3}, {3, 4, 1}, {2, 1, 5}};
  long checked = 0;
  for (const auto& [e, n, m] : shapes) {
    const int cells = e * n * m;
    std::vector<int> labels(m, 0);
    for (std::uint32_t code = 0; code < (1u << cells); ++code) {
      std::vector<int> bits(cells);
      for (int k = 0; k < cells; ++k) bits[k] = (code >> k) & 1u;
      auto t = testing::trace_from_bits(e, n, labels, 2, bits);
      const auto scores = elp(t);
      const auto bi = bi_series(t);
      for (int x = 0; x < m; ++x) {
        int hits = 0;
        double via_tpa = 0.0;
        for (int a = 0; a < e; ++a) {
          via_tpa += tpa(t, a, x);
          for (int i = 0; i < n; ++i) hits += bits[(a * n + i) * m + x];
        }
        REQUIRE(scores[x] == Approx(static_cast<double>(hits) / (n * e)));
        REQUIRE(scores[x] == Approx(via_tpa / e));
      }
      for (int a = 0; a < e; ++a) {
        int all = 0, none = 0;
        for (int x = 0; x < m; ++x) {
          int h = 0;
          for (int i = 0; i < n; ++i) h += bits[(a * n + i) * m + x];
          all += h == n;
          none += h == 0;
        }
        REQUIRE(bi.bi[a] == Approx(std::sqrt(double(all) / m) + std::sqrt(double(none) / m)));
        REQUIRE(bi.bi[a] >= 0.0);
        REQUIRE(bi.bi[a] <= std::sqrt(2.0) + 1e-12);
      }
      // flip each zero bit once
      for (int k = 0; k < cells; ++k) {
        if (bits[k]) continue;
        auto up = bits;
        up[k] = 1;
        const int x = k % m;
        const auto after = elp(testing::trace_from_bits(e, n, labels, 2, up));
        REQUIRE(after[x] - scores[x] == Approx(1.0 / (n * e)));
        for (int y = 0; y < m; ++y)
          if (y != x) REQUIRE(after[y] == scores[y]);
      }
      ++checked;
    }
  }
  CHECK(checked > 4096);
}

TEST_CASE("scores are invariant to model order; bi to example order") {
  auto t = random_logit_trace(4, 5, 30, 3, 21);
  auto p = t.select_models({3, 0, 4, 2, 1});
  const auto a = compute_scores(t), b = compute_scores(p);
  for (int x = 0; x < t.examples(); ++x) {
    CHECK(a.elp[x] == Approx(b.elp[x]));
    CHECK((*a.cum_loss)[x] == Approx((*b.cum_loss)[x]));
    CHECK((*a.mean_margin)[x] == Approx((*b.mean_margin)[x]));
    CHECK((*a.lm)[x] == Approx((*b.lm)[x]));
  }
  CHECK(bi_series(t).bi == bi_series(p).bi);

  std::vector<int> order(t.examples());
  std::iota(order.begin(), order.end(), 0);
  std::reverse(order.begin(), order.end());
  std::vector<int> labels;
  for (int x : order) labels.push_back(t.labels()[x]);
  EnsembleTrace r(t.epochs(), t.models(), labels, t.num_classes(), false);
  for (int e = 0; e < t.epochs(); ++e)
    for (int i = 0; i < t.models(); ++i)
      for (int k = 0; k < t.examples(); ++k) r.set_prediction(e, i, k, t.predicted(e, i, order[k]));
  const auto bt = bi_series(t).bi, br = bi_series(r).bi;
  for (std::size_t e = 0; e < bt.size(); ++e) CHECK(bt[e] == Approx(br[e]));
}

TEST_CASE("wasserstein distance on the agreement grid") {
  // mass {0: 1/2, 1: 1/2} vs Binomial(2, 0.5) on {0, 1/2, 1}
  const std::vector<double> p{0.5, 0.0, 0.5};
  const auto q = binomial_pmf(2, 0.5);
  CHECK(q[1] == Approx(0.5));
  const double d = wasserstein_on_grid(p, q, 0.5);
  CHECK(d == Approx(w1_quantile_coupling(p, q, 0.5)));
  CHECK(d == Approx(0.25));

  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(8));
    std::vector<double> a(n + 1), b(n + 1);
    for (auto& v : a) v = rng.uniform();
    for (auto& v : b) v = rng.uniform();
    const double sa = std::accumulate(a.begin(), a.end(), 0.0), sb = std::accumulate(b.begin(), b.end(), 0.0);
    for (auto& v : a) v /= sa;
    for (auto& v : b) v /= sb;
    REQUIRE(wasserstein_on_grid(a, b, 1.0 / n) == Approx(w1_quantile_coupling(a, b, 1.0 / n)));
  }
  CHECK_THROWS_AS(wasserstein_on_grid(p, std::vector<double>{1.0}, 1.0), ArgumentError);
}

TEST_CASE("binomial distance per subset") {
  // N=2: one noisy example with no correct model, one with both -> p = 0.5
  auto t = testing::trace_from_bits(1, 2, {0, 0}, 2, {0, 1, 0, 1});
  auto d = binomial_distance(t, Mask{1, 1});
  CHECK_FALSE(d[0].clean.has_value());
  REQUIRE(d[0].noisy.has_value());
  CHECK(*d[0].noisy == Approx(0.25));

  // everything correct -> p = 1 and the reference is a point mass at 1
  auto all = testing::trace_from_bits(1, 2, {0, 0}, 2, {1, 1, 1, 1});
  auto da = binomial_distance(all, Mask{0, 0});
  CHECK(*da[0].clean == Approx(0.0));
  CHECK_FALSE(da[0].noisy.has_value());

  // exactly binomial: N=2 with TPA counts 0,1,1,2 matches Binomial(2, 0.5)
  auto exact = testing::trace_from_bits(1, 2, {0, 0, 0, 0}, 2, {0, 1, 0, 1,  0, 0, 1, 1});
  CHECK(*binomial_distance(exact, Mask{0, 0, 0, 0})[0].clean == Approx(0.0));

  CHECK_THROWS_AS(binomial_distance(t, Mask{1}), ArgumentError);
}

TEST_CASE("learning time needs a persistent run or a run to the end") {
  // one model, E=6
  auto t = testing::trace_from_bits(6, 1, {0, 0, 0, 0}, 2,
                                    {0, 0, 0, 0,
                                     1, 0, 0, 0,
                                     1, 0, 0, 0,
                                     0, 1, 0, 0,
                                     1, 1, 0, 0,
                                     1, 1, 1, 0});
  const auto lt = learning_times(t, 3);
  CHECK(lt == std::vector<int>{4, 3, 5, -1});
  CHECK(learning_times(t, 1) == std::vector<int>{1, 3, 5, -1});
  CHECK_THROWS_AS(learning_times(t, 0), ArgumentError);
}

namespace {

// Clean group gains one correct model per epoch, noisy group one every other
// epoch. Model 0 is always correct so every example has learning time 0.
EnsembleTrace staged_trace(int per_group, bool noisy_slower, Mask& mask) {
  const int n = 8, e = 12, m = 2 * per_group;
  EnsembleTrace t(e, n, std::vector<int>(m, 0), 2, true);
  mask.assign(m, 0);
  for (int x = per_group; x < m; ++x) mask[x] = 1;
  for (int a = 0; a < e; ++a)
    for (int i = 0; i < n; ++i)
      for (int x = 0; x < m; ++x) {
        const int rate = (mask[x] && noisy_slower) ? 2 : 1;
        const bool ok = i <= a / rate;
        const std::vector<double> l{ok ? 1.0 : -1.0, 0.0};
        t.set_logits(a, i, x, l);
      }
  return t;
}

}  // namespace

TEST_CASE("slope analysis") {
  Mask mask;
  auto same = staged_trace(10, false, mask);
  auto table = slope_analysis(same, mask);
  REQUIRE(table.rows.size() == 12);
  for (const auto& r : table.rows) {
    CHECK(r.learning_time == 0);
    CHECK(r.delta_agreement == 0.0);
    CHECK(r.delta_logit == 0.0);
    CHECK(r.difference == 0.0);
  }

  auto slow = staged_trace(10, true, mask);
  table = slope_analysis(slow, mask);
  REQUIRE(table.rows.size() == 12);
  CHECK(table.rows[6].delta_agreement > 0.0);
  CHECK(table.rows[0].delta_agreement == 0.0);

  // buckets under the minimum are reported, not emitted
  auto small = staged_trace(5, true, mask);
  table = slope_analysis(small, mask);
  CHECK(table.rows.empty());
  REQUIRE(table.dropped.size() == 1);
  CHECK(table.dropped[0].clean_count == 5);
  CHECK(table.dropped[0].noisy_count == 5);

  Mask none(same.examples(), 0);
  CHECK(slope_analysis(same, none).rows.empty());
  CHECK(slope_analysis(same, none).dropped.empty());

  auto bits = testing::trace_from_bits(1, 1, {0}, 2, {1});
  CHECK_THROWS_AS(slope_analysis(bits, Mask{1}), FidelityError);
}
