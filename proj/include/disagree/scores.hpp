#pragma once

#include <optional>
#include <span>
#include <vector>

#include "disagree/dataset.hpp"
#include "disagree/trace.hpp"

namespace disagree {

/// Fraction of models whose prediction equals the given label.
double tpa(const EnsembleTrace& trace, int epoch, int example);

/// Mean TPA over the trace's epoch set, per example.
std::vector<double> elp(const EnsembleTrace& trace);

/// Mean cross-entropy of softmax(logits) against the given label over models
/// and the epoch set. Needs logits.
std::vector<double> cum_loss(const EnsembleTrace& trace);

/// Mean of (label logit - largest other logit). Needs logits.
std::vector<double> mean_margin(const EnsembleTrace& trace);

/// Mean softmax probability of the given label (LM). Needs logits.
std::vector<double> logits_mean(const EnsembleTrace& trace);

struct ScoreTable {
  std::vector<double> elp;
  std::optional<std::vector<double>> cum_loss;
  std::optional<std::vector<double>> mean_margin;
  std::optional<std::vector<double>> lm;
};

/// Every score the trace's fidelity supports.
ScoreTable compute_scores(const EnsembleTrace& trace);

struct BiSeries {
  std::vector<double> bi;
  int max_bi_epoch = 0;
};

/// Per-epoch bimodal index sqrt(frac all-correct) + sqrt(frac all-wrong).
BiSeries bi_series(const EnsembleTrace& trace);

/// Epoch set [0, argmax BI], the opt-in truncation of the score window.
std::vector<int> epochs_through_max_bi(const EnsembleTrace& trace);

/// 1-D Wasserstein-1 distance between two pmfs on the grid {0, h, 2h, ...}.
double wasserstein_on_grid(std::span<const double> p, std::span<const double> q, double spacing);

/// Binomial(n, p) pmf on {0..n}.
std::vector<double> binomial_pmf(int n, double p);

struct BinomialDistance {
  std::optional<double> clean;
  std::optional<double> noisy;
};

/// Per epoch: W1 distance between the empirical distribution of TPA on each
/// subset and Binomial(N, p) with p that subset's mean accuracy.
std::vector<BinomialDistance> binomial_distance(const EnsembleTrace& trace, const Mask& noisy_mask);

/// Per example: first epoch from which some model is correct for `persistence`
/// consecutive epochs (or through the last epoch). -1 if never.
std::vector<int> learning_times(const EnsembleTrace& trace, int persistence = 3);

struct SlopeRow {
  int learning_time;
  int epoch;
  double delta_agreement;  // clean mean TPA - noisy mean TPA
  double delta_logit;      // clean mean p_y - noisy mean p_y
  double difference;       // delta_agreement - delta_logit
};

struct DroppedBucket {
  int learning_time;
  int clean_count;
  int noisy_count;
};

struct SlopeTable {
  std::vector<SlopeRow> rows;
  std::vector<DroppedBucket> dropped;
};

/// Groups clean and noisy examples by learning time and compares how fast
/// ensemble agreement and label probability rise in each group.
/// Buckets with fewer than `min_bucket` clean or noisy examples are dropped.
SlopeTable slope_analysis(const EnsembleTrace& trace, const Mask& noisy_mask, int min_bucket = 10,
                          int persistence = 3);

}  // namespace disagree
