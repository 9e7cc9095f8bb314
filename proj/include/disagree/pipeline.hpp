#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "disagree/bmm.hpp"
#include "disagree/dataset.hpp"
#include "disagree/trace.hpp"
#include "disagree/trainer.hpp"

namespace disagree {

enum class ScoreKind { Elp, CumLoss, MeanMargin };
enum class Orientation { LowIsNoisy, HighIsNoisy };

std::string to_string(ScoreKind kind);
ScoreKind parse_score_kind(const std::string& name);

struct IdentificationMetrics {
  std::optional<double> f1;
  std::optional<double> precision;
  std::optional<double> recall;
  double estimate_abs_error = 0.0;
  double true_rate = 0.0;
  int true_positives = 0;
  int flagged = 0;
  int truly_noisy = 0;
};

inline constexpr int kNoiseReportVersion = 1;

struct NoiseReport {
  double noise_estimate = 0.0;
  std::vector<int> noisy_indices;  // sorted, unique
  int num_examples = 0;
  ScoreKind score_used = ScoreKind::Elp;
  Orientation orientation = Orientation::LowIsNoisy;
  std::optional<BmmFit> bmm;
  bool degenerate = false;
  /// Affine map applied to the raw score before the fit: s = (raw - offset) * scale.
  double norm_offset = 0.0;
  double norm_scale = 1.0;
  std::optional<IdentificationMetrics> metrics;
  std::map<std::string, std::string> provenance;
};

/// Map a raw score vector into [0,1] so that low values mean "likely noisy".
/// ELP passes through; CumLoss is min-max scaled and flipped; MeanMargin is
/// min-max scaled. Returns the normalized scores and the (offset, scale) used.
std::vector<double> normalize_scores(ScoreKind kind, std::span<const double> raw, double* offset = nullptr,
                                     double* scale = nullptr);

/// Fit the two-component BMM, split at the intersection and flag the side
/// named by `orientation`. A degenerate fit yields an empty report with
/// `degenerate` set.
NoiseReport disagreenet(std::span<const double> scores, Orientation orientation = Orientation::LowIsNoisy,
                        const BmmOptions& options = {});

/// Flag every score on the noisy side of report.bmm's threshold and set the
/// estimate. Used to re-apply a stored fit.
void apply_threshold(std::span<const double> scores, NoiseReport& report);

/// Compute the chosen score from a trace, normalize it and run disagreenet.
NoiseReport disagreenet_from_trace(const EnsembleTrace& trace, ScoreKind kind, const BmmOptions& options = {});

/// Binary detection metrics with "flagged noisy" as the positive class.
IdentificationMetrics identification_metrics(const NoiseReport& report, const Mask& noisy_mask);

struct RetrainResult {
  double best_test_accuracy = 0.0;
  int best_epoch = 0;
  double final_test_accuracy = 0.0;
  int retained_count = 0;
  std::vector<double> test_accuracy_per_epoch;
};

/// Train a single model on `train` minus `removed` and score it on `test`
/// after every epoch.
RetrainResult retrain_without(const LabeledDataset& train, const std::vector<int>& removed,
                              const LabeledDataset& test, const TrainConfig& cfg);

/// retrain_without using the report's flagged indices.
RetrainResult filter_and_retrain(const LabeledDataset& train, const NoiseReport& report,
                                 const LabeledDataset& test, const TrainConfig& cfg);

/// `count` distinct ids from [0, num_examples), sorted; the random-removal baseline.
std::vector<int> random_subset(int num_examples, int count, std::uint64_t seed);

nlohmann::json to_json(const BmmFit& fit);
BmmFit bmm_from_json(const nlohmann::json& j);
nlohmann::json to_json(const NoiseReport& report);
NoiseReport noise_report_from_json(const nlohmann::json& j);

}  // namespace disagree
