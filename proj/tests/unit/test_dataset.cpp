#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "disagree/dataset.hpp"
#include "disagree/error.hpp"
#include "helpers.hpp"

using namespace disagree;

namespace {

// Plain batch gradient descent on binary logistic regression, used only as
// an oracle for separability of the generated data.
double logistic_train_accuracy(const LabeledDataset& ds) {
  const int d = ds.dim(), m = ds.size();
  std::vector<double> w(d + 1, 0.0);
  for (int it = 0; it < 500; ++it) {
    std::vector<double> g(d + 1, 0.0);
    for (int i = 0; i < m; ++i) {
      double z = w[d];
      for (int j = 0; j < d; ++j) z += w[j] * ds.features(i, j);
      const double p = 1.0 / (1.0 + std::exp(-z));
      const double r = p - ds.given_labels[i];
      for (int j = 0; j < d; ++j) g[j] += r * ds.features(i, j);
      g[d] += r;
    }
    for (int j = 0; j <= d; ++j) w[j] -= 0.5 * g[j] / m;
  }
  int ok = 0;
  for (int i = 0; i < m; ++i) {
    double z = w[d];
    for (int j = 0; j < d; ++j) z += w[j] * ds.features(i, j);
    ok += (z > 0.0) == (ds.given_labels[i] == 1);
  }
  return static_cast<double>(ok) / m;
}

}  // namespace

TEST_CASE("make_blobs minimal case") {
  auto ds = make_blobs(2, 1, 2, 10.0, 7);
  CHECK(ds.size() == 2);
  CHECK(ds.num_classes == 2);
  CHECK(ds.given_labels[0] != ds.given_labels[1]);
}

TEST_CASE("make_blobs class counts and ground truth") {
  auto ds = make_blobs(4, 250, 2, 6.0, 1);
  REQUIRE(ds.size() == 1000);
  std::map<int, int> counts;
  for (int y : ds.given_labels) ++counts[y];
  for (int c = 0; c < 4; ++c) CHECK(counts[c] == 250);
  REQUIRE(ds.has_ground_truth());
  CHECK(*ds.clean_labels == ds.given_labels);
  CHECK(std::count(ds.corruption_mask->begin(), ds.corruption_mask->end(), 1) == 0);
  ds.validate();

  // class centroids sit at least ~separation apart
  std::vector<Eigen::RowVectorXd> centroid(4, Eigen::RowVectorXd::Zero(2));
  for (int i = 0; i < ds.size(); ++i) centroid[ds.given_labels[i]] += ds.features.row(i) / 250.0;
  for (int a = 0; a < 4; ++a)
    for (int b = a + 1; b < 4; ++b) CHECK((centroid[a] - centroid[b]).norm() > 6.0 - 0.5);
}

TEST_CASE("make_blobs is separable by a logistic regression oracle") {
  auto ds = make_blobs(2, 500, 2, 8.0, 3);
  CHECK(logistic_train_accuracy(ds) >= 0.99);
}

TEST_CASE("make_blobs rejects invalid sizes") {
  CHECK_THROWS_AS(make_blobs(1, 10, 2, 5.0, 0), ArgumentError);
  CHECK_THROWS_AS(make_blobs(3, 0, 2, 5.0, 0), ArgumentError);
  CHECK_THROWS_AS(make_blobs(3, 10, 0, 5.0, 0), ArgumentError);
  CHECK_THROWS_AS(make_blobs(3, 10, 2, 0.0, 0), ArgumentError);
}

TEST_CASE("make_blobs works in one dimension") {
  auto ds = make_blobs(3, 50, 1, 8.0, 2);
  CHECK(ds.dim() == 1);
  CHECK(ds.size() == 150);
}

TEST_CASE("load_csv maps names to sorted dense ids") {
  auto dir = testing::scratch_dir("csv_names");
  testing::write_text(dir / "a.csv", "x0,x1,label\n1,2,cat\n3,4,dog\n5,6,cat\n");
  auto ds = load_csv(dir / "a.csv");
  CHECK(ds.size() == 3);
  CHECK(ds.num_classes == 2);
  CHECK(ds.given_labels == Labels{0, 1, 0});
  CHECK(ds.class_names == std::vector<std::string>{"cat", "dog"});
  CHECK(ds.features(2, 1) == 6.0);
  CHECK_FALSE(ds.clean_labels.has_value());
}

TEST_CASE("load_csv integer names sort numerically") {
  auto dir = testing::scratch_dir("csv_ints");
  testing::write_text(dir / "a.csv", "x,label\n0,10\n0,2\n0,9\n");
  auto ds = load_csv(dir / "a.csv");
  CHECK(ds.given_labels == Labels{2, 0, 1});
}

TEST_CASE("load_csv errors") {
  auto dir = testing::scratch_dir("csv_errors");
  testing::write_text(dir / "empty.csv", "x0,label\n");
  CHECK_THROWS_WITH_AS(load_csv(dir / "empty.csv"), doctest::Contains("no examples"), ParseError);

  testing::write_text(dir / "short.csv", "x0,x1,label\n1,2,a\n3,b\n");
  try {
    load_csv(dir / "short.csv");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }

  testing::write_text(dir / "nan.csv", "x0,label\n1,a\nfoo,b\n");
  CHECK_THROWS_AS(load_csv(dir / "nan.csv"), ParseError);

  testing::write_text(dir / "nolabel.csv", "x0,x1\n1,2\n");
  CHECK_THROWS_AS(load_csv(dir / "nolabel.csv"), ParseError);

  CHECK_THROWS(load_csv(dir / "missing.csv"));
}

TEST_CASE("load_csv clean-label column identical to labels gives an empty mask") {
  auto dir = testing::scratch_dir("csv_clean");
  testing::write_text(dir / "a.csv", "x0,label,clean_label\n1,a,a\n2,b,b\n3,a,a\n");
  auto ds = load_csv(dir / "a.csv");
  REQUIRE(ds.corruption_mask.has_value());
  CHECK(std::count(ds.corruption_mask->begin(), ds.corruption_mask->end(), 1) == 0);
}

TEST_CASE("save_csv / load_csv round trip") {
  auto dir = testing::scratch_dir("csv_roundtrip");
  NoiseSpec spec;
  spec.rate = 0.3;
  spec.seed = 5;
  auto ds = inject_noise(make_blobs(3, 20, 2, 5.0, 4), spec);
  save_csv(ds, dir / "d.csv");
  auto back = load_csv(dir / "d.csv");
  CHECK(back.features == ds.features);
  CHECK(back.given_labels == ds.given_labels);
  CHECK(back.clean_labels == ds.clean_labels);
  CHECK(back.corruption_mask == ds.corruption_mask);
  CHECK(back.num_classes == ds.num_classes);
}

TEST_CASE("inject_noise rate 0 is the identity") {
  auto ds = make_blobs(3, 30, 2, 5.0, 1);
  NoiseSpec spec;
  spec.seed = 9;
  auto out = inject_noise(ds, spec);
  CHECK(out.given_labels == ds.given_labels);
  CHECK(out.features == ds.features);
  CHECK(std::count(out.corruption_mask->begin(), out.corruption_mask->end(), 1) == 0);
}

TEST_CASE("inject_noise with two classes and rate 1 flips every label") {
  auto ds = make_blobs(2, 40, 2, 5.0, 1);
  NoiseSpec spec;
  spec.rate = 1.0;
  auto out = inject_noise(ds, spec);
  for (int i = 0; i < ds.size(); ++i) CHECK(out.given_labels[i] == 1 - ds.given_labels[i]);
}

TEST_CASE("inject_noise symmetric counts") {
  auto ds = make_blobs(4, 250, 2, 5.0, 1);
  NoiseSpec spec;
  spec.rate = 0.4;
  spec.seed = 11;
  auto out = inject_noise(ds, spec);
  const auto& mask = *out.corruption_mask;
  CHECK(std::count(mask.begin(), mask.end(), 1) == 400);
  std::map<int, int> offset;  // (noisy - clean) mod C, uniform over {1,2,3}
  for (int i = 0; i < out.size(); ++i) {
    CHECK((mask[i] != 0) == (out.given_labels[i] != ds.given_labels[i]));
    if (mask[i]) ++offset[(out.given_labels[i] - ds.given_labels[i] + 4) % 4];
  }
  CHECK(offset.count(0) == 0);
  const double expected = 400.0 / 3.0, sigma = std::sqrt(400.0 * (1.0 / 3.0) * (2.0 / 3.0));
  for (int k = 1; k < 4; ++k) CHECK(std::abs(offset[k] - expected) <= 3.0 * sigma);
  out.validate();
}

TEST_CASE("inject_noise asymmetric follows the permutation") {
  auto ds = make_blobs(4, 100, 2, 5.0, 2);
  NoiseSpec spec;
  spec.kind = NoiseKind::AsymmetricPermutation;
  spec.rate = 0.3;
  spec.seed = 3;
  SUBCASE("default cyclic") {
    auto out = inject_noise(ds, spec);
    for (int i = 0; i < ds.size(); ++i)
      if ((*out.corruption_mask)[i]) CHECK(out.given_labels[i] == (ds.given_labels[i] + 1) % 4);
  }
  SUBCASE("explicit") {
    spec.permutation = {2, 3, 1, 0};
    auto out = inject_noise(ds, spec);
    for (int i = 0; i < ds.size(); ++i)
      if ((*out.corruption_mask)[i]) CHECK(out.given_labels[i] == spec.permutation[ds.given_labels[i]]);
  }
}

TEST_CASE("inject_noise argument errors") {
  auto ds = make_blobs(3, 10, 2, 5.0, 1);
  NoiseSpec spec;
  spec.rate = 1.5;
  CHECK_THROWS_AS(inject_noise(ds, spec), ArgumentError);
  spec.rate = -0.1;
  CHECK_THROWS_AS(inject_noise(ds, spec), ArgumentError);
  spec.rate = 0.2;
  spec.kind = NoiseKind::AsymmetricPermutation;
  spec.permutation = {1, 1, 2};
  CHECK_THROWS_AS(inject_noise(ds, spec), ArgumentError);  // fixed point 2
  spec.permutation = {1, 0, 0};
  CHECK_THROWS_AS(inject_noise(ds, spec), ArgumentError);  // not a bijection
  spec.permutation = {1, 2};
  CHECK_THROWS_AS(inject_noise(ds, spec), ArgumentError);
  // already noisy input
  spec.kind = NoiseKind::Symmetric;
  spec.permutation.clear();
  auto noisy = inject_noise(ds, spec);
  CHECK_THROWS_AS(inject_noise(noisy, spec), ArgumentError);
}

TEST_CASE("property: corrupted count is exactly round(rate * M)") {
  for (int m : {1, 7, 10, 99, 250}) {
    auto ds = make_blobs(3, m, 2, 5.0, static_cast<std::uint64_t>(m));
    for (double rate : {0.0, 0.01, 0.125, 0.2, 0.333, 0.5, 0.75, 1.0}) {
      NoiseSpec spec;
      spec.rate = rate;
      spec.seed = static_cast<std::uint64_t>(m * 100 + rate * 1000);
      auto out = inject_noise(ds, spec);
      const long got = std::count(out.corruption_mask->begin(), out.corruption_mask->end(), 1);
      CHECK(got == std::lround(rate * ds.size()));
      CHECK(got == corrupted_count(rate, ds.size()));
    }
  }
}

TEST_CASE("property: inject_noise is deterministic") {
  auto ds = make_blobs(5, 60, 3, 5.0, 8);
  NoiseSpec spec;
  spec.rate = 0.37;
  spec.seed = 21;
  auto a = inject_noise(ds, spec);
  auto b = inject_noise(ds, spec);
  CHECK(a.given_labels == b.given_labels);
  CHECK(a.corruption_mask == b.corruption_mask);
  spec.seed = 22;
  auto c = inject_noise(ds, spec);
  CHECK(a.corruption_mask != c.corruption_mask);
}

TEST_CASE("stratified_split keeps class proportions") {
  auto ds = make_blobs(4, 100, 2, 5.0, 1);
  auto [train, test] = stratified_split(ds, 0.2, 3);
  CHECK(train.size() == 320);
  CHECK(test.size() == 80);
  std::map<int, int> counts;
  for (int y : test.given_labels) ++counts[y];
  for (int c = 0; c < 4; ++c) CHECK(counts[c] == 20);
  CHECK_THROWS_AS(stratified_split(ds, 1.5, 3), ArgumentError);
}

TEST_CASE("validate catches inconsistent masks") {
  auto ds = make_blobs(2, 5, 2, 5.0, 1);
  (*ds.corruption_mask)[0] = 1;
  CHECK_THROWS_AS(ds.validate(), ArgumentError);
}
