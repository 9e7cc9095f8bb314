#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "disagree/error.hpp"
#include "disagree/pipeline.hpp"
#include "disagree/rng.hpp"
#include "disagree/scores.hpp"

using namespace disagree;
using doctest::Approx;

namespace {

std::vector<double> bimodal_fixture() {
  Rng rng(5);
  std::vector<double> s;
  for (int i = 0; i < 500; ++i) s.push_back(0.05 + 0.02 * (rng.uniform() - 0.5));
  for (int i = 0; i < 500; ++i) s.push_back(0.95 + 0.02 * (rng.uniform() - 0.5));
  return s;
}

LabeledDataset noisy_blobs(double rate, std::uint64_t seed, int per_class = 500) {
  auto clean = make_blobs(4, per_class, 2, 8.0, seed);
  return inject_noise(clean, {.kind = NoiseKind::Symmetric, .rate = rate, .seed = derive_seed(seed, "noise")});
}

NoiseReport report_with(int m, std::vector<int> flagged) {
  NoiseReport r;
  r.num_examples = m;
  r.noisy_indices = std::move(flagged);
  r.noise_estimate = static_cast<double>(r.noisy_indices.size()) / m;
  return r;
}

}  // namespace

TEST_CASE("bimodal scores flag the low half") {
  const auto s = bimodal_fixture();
  const auto r = disagreenet(s);
  CHECK_FALSE(r.degenerate);
  CHECK(r.noise_estimate == 0.5);
  std::vector<int> low(500);
  std::iota(low.begin(), low.end(), 0);
  CHECK(r.noisy_indices == low);

  const auto hi = disagreenet(s, Orientation::HighIsNoisy);
  CHECK(hi.noisy_indices.front() == 500);
  CHECK(hi.noise_estimate == 0.5);
}

TEST_CASE("unimodal scores take the degenerate path") {
  const std::vector<double> s(200, 0.9);
  const auto r = disagreenet(s);
  CHECK(r.degenerate);
  CHECK(r.noise_estimate == 0.0);
  CHECK(r.noisy_indices.empty());
  CHECK_FALSE(r.bmm.has_value());

  CHECK_THROWS_AS(disagreenet(std::vector<double>(20, 1.5)), ArgumentError);
}

TEST_CASE("estimate equals the flagged fraction") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> s(300);
    const double split = rng.uniform(0.1, 0.5);
    for (std::size_t i = 0; i < s.size(); ++i)
      s[i] = rng.uniform() < split ? rng.uniform(0.0, 0.3) : rng.uniform(0.6, 1.0);
    const auto r = disagreenet(s, Orientation::LowIsNoisy, {.seed = static_cast<std::uint64_t>(trial)});
    if (r.degenerate) continue;
    CHECK(r.noise_estimate == static_cast<double>(r.noisy_indices.size()) / s.size());
    CHECK(std::is_sorted(r.noisy_indices.begin(), r.noisy_indices.end()));
    CHECK(std::adjacent_find(r.noisy_indices.begin(), r.noisy_indices.end()) == r.noisy_indices.end());
    for (int i : r.noisy_indices) CHECK(s[i] < r.bmm->threshold);
  }
}

TEST_CASE("identification metrics") {
  Mask mask(1000, 0);
  for (int i = 0; i < 400; ++i) mask[i] = 1;
  std::vector<int> flagged;
  for (int i = 0; i < 250; ++i) flagged.push_back(i);
  for (int i = 500; i < 550; ++i) flagged.push_back(i);
  const auto m = identification_metrics(report_with(1000, flagged), mask);
  CHECK(*m.precision == Approx(250.0 / 300.0));
  CHECK(*m.recall == Approx(0.625));
  CHECK(*m.f1 == Approx(2 * (250.0 / 300) * 0.625 / (250.0 / 300 + 0.625)));
  CHECK(*m.f1 == Approx(0.7143).epsilon(1e-4));
  CHECK(m.estimate_abs_error == Approx(0.1));

  std::vector<int> exact(400);
  std::iota(exact.begin(), exact.end(), 0);
  CHECK(*identification_metrics(report_with(1000, exact), mask).f1 == 1.0);

  const auto none = identification_metrics(report_with(1000, {}), mask);
  CHECK(*none.recall == 0.0);
  CHECK(*none.f1 == 0.0);
  CHECK_FALSE(none.precision.has_value());

  const auto clean = identification_metrics(report_with(1000, {1, 2}), Mask(1000, 0));
  CHECK_FALSE(clean.precision.has_value());
  CHECK_FALSE(clean.recall.has_value());
  CHECK_FALSE(clean.f1.has_value());

  CHECK_THROWS_AS(identification_metrics(report_with(10, {}), mask), ArgumentError);
}

TEST_CASE("score normalization") {
  const std::vector<double> loss{0.5, 1.5, 2.5};
  double off = 0, sc = 0;
  auto n = normalize_scores(ScoreKind::CumLoss, loss, &off, &sc);
  CHECK(n == std::vector<double>{1.0, 0.5, 0.0});
  CHECK((loss[1] - off) * sc == Approx(n[1]));

  n = normalize_scores(ScoreKind::MeanMargin, std::vector<double>{-2.0, 0.0, 2.0});
  CHECK(n == std::vector<double>{0.0, 0.5, 1.0});

  n = normalize_scores(ScoreKind::Elp, std::vector<double>{0.2, 0.7});
  CHECK(n == std::vector<double>{0.2, 0.7});

  n = normalize_scores(ScoreKind::MeanMargin, std::vector<double>{3.0, 3.0});
  CHECK(n == std::vector<double>{0.5, 0.5});

  CHECK(parse_score_kind("cum_loss") == ScoreKind::CumLoss);
  CHECK(parse_score_kind(to_string(ScoreKind::MeanMargin)) == ScoreKind::MeanMargin);
  CHECK_THROWS_AS(parse_score_kind("auc"), ArgumentError);
  CHECK_THROWS_AS(normalize_scores(ScoreKind::Elp, std::vector<double>{}), ArgumentError);
}

TEST_CASE("noise report json round trip") {
  auto r = disagreenet(bimodal_fixture());
  r.score_used = ScoreKind::CumLoss;
  r.norm_offset = 2.5;
  r.norm_scale = -0.5;
  Mask mask(1000, 0);
  for (int i = 0; i < 480; ++i) mask[i] = 1;
  r.metrics = identification_metrics(r, mask);
  const auto back = noise_report_from_json(nlohmann::json::parse(to_json(r).dump()));
  CHECK(back.noisy_indices == r.noisy_indices);
  CHECK(back.noise_estimate == r.noise_estimate);
  CHECK(back.score_used == r.score_used);
  CHECK(back.norm_scale == r.norm_scale);
  CHECK(back.provenance == r.provenance);
  REQUIRE(back.bmm.has_value());
  CHECK(back.bmm->alpha == r.bmm->alpha);
  CHECK(back.bmm->threshold == r.bmm->threshold);
  CHECK(back.bmm->log_likelihood_history == r.bmm->log_likelihood_history);
  REQUIRE(back.metrics.has_value());
  CHECK(*back.metrics->f1 == *r.metrics->f1);

  auto bad = to_json(r);
  bad["format_version"] = 99;
  CHECK_THROWS(noise_report_from_json(bad));
}

TEST_CASE("end to end: 20% symmetric noise is estimated within 0.03") {
  const auto ds = noisy_blobs(0.2, 0);
  TrainConfig cfg;
  cfg.seed = 0;
  const auto trace = train_ensemble(ds, cfg);
  const auto r = disagreenet_from_trace(trace, ScoreKind::Elp);
  CHECK(std::abs(r.noise_estimate - 0.2) <= 0.03);

  const auto again = disagreenet_from_trace(trace, ScoreKind::Elp);
  CHECK(again.noisy_indices == r.noisy_indices);

  // central claim: clean examples score higher than noisy ones
  const auto scores = elp(trace);
  double clean = 0, noisy = 0;
  int nc = 0, nn = 0;
  for (int i = 0; i < ds.size(); ++i) {
    if ((*ds.corruption_mask)[i]) {
      noisy += scores[i];
      ++nn;
    } else {
      clean += scores[i];
      ++nc;
    }
  }
  CHECK(clean / nc > noisy / nn);
}

TEST_CASE("filtered retraining") {
  auto clean = make_blobs(4, 300, 2, 8.0, 3);
  auto [train, test] = stratified_split(clean, 0.2, 3);
  TrainConfig cfg;
  cfg.ensemble_size = 1;
  cfg.epochs = 10;
  cfg.seed = 4;

  SUBCASE("flagging nothing matches plain training") {
    const auto a = filter_and_retrain(train, report_with(train.size(), {}), test, cfg);
    const auto b = retrain_without(train, {}, test, cfg);
    CHECK(a.test_accuracy_per_epoch == b.test_accuracy_per_epoch);
    CHECK(a.retained_count == train.size());
    CHECK(a.test_accuracy_per_epoch.size() == 10);
    CHECK(a.best_test_accuracy == *std::max_element(a.test_accuracy_per_epoch.begin(), a.test_accuracy_per_epoch.end()));
  }

  SUBCASE("oracle removal is at least as good as random removal") {
    auto noisy = inject_noise(train, {.rate = 0.4, .seed = 9});
    std::vector<int> oracle;
    for (int i = 0; i < noisy.size(); ++i)
      if ((*noisy.corruption_mask)[i]) oracle.push_back(i);
    const auto random = random_subset(noisy.size(), static_cast<int>(oracle.size()), 2);
    CHECK(random.size() == oracle.size());
    const auto o = retrain_without(noisy, oracle, test, cfg);
    const auto r = retrain_without(noisy, random, test, cfg);
    CHECK(o.best_test_accuracy >= r.best_test_accuracy);
  }

  SUBCASE("all examples flagged") {
    std::vector<int> all(train.size());
    std::iota(all.begin(), all.end(), 0);
    CHECK_THROWS_WITH(filter_and_retrain(train, report_with(train.size(), all), test, cfg),
                      doctest::Contains("empty training set"));
    CHECK_THROWS_AS(filter_and_retrain(train, report_with(3, {}), test, cfg), ArgumentError);
  }
}

TEST_CASE("filtering by the ensemble does not hurt at 20% noise") {
  const auto ds = noisy_blobs(0.2, 1, 625);
  auto [train, test] = stratified_split(ds, 0.2, 1);
  TrainConfig cfg;
  cfg.seed = 1;
  const auto report = disagreenet_from_trace(train_ensemble(train, cfg), ScoreKind::Elp);
  TrainConfig single = cfg;
  single.ensemble_size = 1;
  const auto filtered = filter_and_retrain(train, report, test, single);
  const auto baseline = retrain_without(train, {}, test, single);
  CHECK(filtered.best_test_accuracy >= baseline.best_test_accuracy);
}

TEST_CASE("random subset") {
  const auto s = random_subset(50, 20, 3);
  CHECK(s.size() == 20);
  CHECK(std::is_sorted(s.begin(), s.end()));
  CHECK(std::adjacent_find(s.begin(), s.end()) == s.end());
  CHECK(s == random_subset(50, 20, 3));
  CHECK(s.back() < 50);
  CHECK_THROWS_AS(random_subset(5, 6, 0), ArgumentError);
}
