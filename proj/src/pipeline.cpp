#include "disagree/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "disagree/error.hpp"
#include "disagree/rng.hpp"
#include "disagree/scores.hpp"

namespace disagree {

std::string to_string(ScoreKind kind) {
  switch (kind) {
    case ScoreKind::Elp:
      return "elp";
    case ScoreKind::CumLoss:
      return "cum_loss";
    case ScoreKind::MeanMargin:
      return "mean_margin";
  }
  return "?";
}

ScoreKind parse_score_kind(const std::string& name) {
  if (name == "elp") return ScoreKind::Elp;
  if (name == "cum_loss" || name == "cumloss") return ScoreKind::CumLoss;
  if (name == "mean_margin" || name == "meanmargin") return ScoreKind::MeanMargin;
  throw ArgumentError("unknown score '" + name + "'");
}

std::vector<double> normalize_scores(ScoreKind kind, std::span<const double> raw, double* offset,
                                     double* scale) {
  if (raw.empty()) throw ArgumentError("no scores");
  double off = 0.0, sc = 1.0;
  if (kind != ScoreKind::Elp) {
    const auto [mn, mx] = std::minmax_element(raw.begin(), raw.end());
    const double span = *mx - *mn;
    if (kind == ScoreKind::CumLoss) {
      // High loss means noisy: s = (max - raw) / span.
      off = *mx;
      sc = span > 0.0 ? -1.0 / span : 0.0;
    } else {
      off = *mn;
      sc = span > 0.0 ? 1.0 / span : 0.0;
    }
  }
  std::vector<double> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = kind == ScoreKind::Elp ? raw[i] : (raw[i] - off) * sc;
  if (kind != ScoreKind::Elp && sc == 0.0) std::fill(out.begin(), out.end(), 0.5);
  if (offset) *offset = off;
  if (scale) *scale = sc;
  return out;
}

NoiseReport disagreenet(std::span<const double> scores, Orientation orientation, const BmmOptions& options) {
  NoiseReport report;
  report.num_examples = static_cast<int>(scores.size());
  report.orientation = orientation;
  report.provenance["bmm_seed"] = std::to_string(options.seed);
  report.provenance["bmm_restarts"] = std::to_string(options.restarts);
  for (double s : scores)
    if (!(s >= 0.0 && s <= 1.0)) throw ArgumentError("disagreenet expects scores in [0,1]");
  try {
    report.bmm = fit_bmm(scores, options);
  } catch (const DegenerateFitError&) {
    report.degenerate = true;
    return report;
  }
  apply_threshold(scores, report);
  return report;
}

void apply_threshold(std::span<const double> scores, NoiseReport& report) {
  if (!report.bmm) throw ArgumentError("report has no fit");
  report.num_examples = static_cast<int>(scores.size());
  report.noisy_indices.clear();
  const double t = report.bmm->threshold;
  for (int i = 0; i < report.num_examples; ++i) {
    const bool noisy = report.orientation == Orientation::LowIsNoisy ? scores[i] < t : scores[i] > t;
    if (noisy) report.noisy_indices.push_back(i);
  }
  report.noise_estimate =
      report.num_examples ? static_cast<double>(report.noisy_indices.size()) / report.num_examples : 0.0;
}

NoiseReport disagreenet_from_trace(const EnsembleTrace& trace, ScoreKind kind, const BmmOptions& options) {
  std::vector<double> raw;
  switch (kind) {
    case ScoreKind::Elp:
      raw = elp(trace);
      break;
    case ScoreKind::CumLoss:
      raw = cum_loss(trace);
      break;
    case ScoreKind::MeanMargin:
      raw = mean_margin(trace);
      break;
  }
  double off = 0.0, sc = 1.0;
  const auto normalized = normalize_scores(kind, raw, &off, &sc);
  NoiseReport report = disagreenet(normalized, Orientation::LowIsNoisy, options);
  report.score_used = kind;
  report.norm_offset = off;
  report.norm_scale = sc;
  report.provenance["trace_seed"] = std::to_string(trace.seed());
  return report;
}

IdentificationMetrics identification_metrics(const NoiseReport& report, const Mask& noisy_mask) {
  if (static_cast<int>(noisy_mask.size()) != report.num_examples) throw ArgumentError("mask size mismatch");
  IdentificationMetrics m;
  m.flagged = static_cast<int>(report.noisy_indices.size());
  for (auto v : noisy_mask) m.truly_noisy += v != 0;
  for (int i : report.noisy_indices) m.true_positives += noisy_mask[i] != 0;
  const int fp = m.flagged - m.true_positives;
  const int fn = m.truly_noisy - m.true_positives;
  if (m.flagged > 0 && m.truly_noisy > 0) m.precision = static_cast<double>(m.true_positives) / m.flagged;
  if (m.truly_noisy > 0) m.recall = static_cast<double>(m.true_positives) / m.truly_noisy;
  const int denom = 2 * m.true_positives + fp + fn;
  if (denom > 0 && m.truly_noisy > 0) m.f1 = 2.0 * m.true_positives / denom;
  m.true_rate = static_cast<double>(m.truly_noisy) / report.num_examples;
  m.estimate_abs_error = std::abs(report.noise_estimate - m.true_rate);
  return m;
}

RetrainResult retrain_without(const LabeledDataset& train, const std::vector<int>& removed,
                              const LabeledDataset& test, const TrainConfig& cfg) {
  std::vector<std::uint8_t> drop(static_cast<std::size_t>(train.size()), 0);
  for (int i : removed) {
    if (i < 0 || i >= train.size()) throw ArgumentError("removed index out of range");
    drop[i] = 1;
  }
  std::vector<int> keep;
  for (int i = 0; i < train.size(); ++i)
    if (!drop[i]) keep.push_back(i);
  if (keep.empty()) throw ArgumentError("empty training set");
  if (test.size() == 0) throw ArgumentError("empty test set");

  const LabeledDataset retained = train.subset(keep);
  RetrainResult result;
  result.retained_count = static_cast<int>(keep.size());
  train_model(retained, cfg, derive_seed(cfg.seed, "retrain"), nullptr, 0,
              [&](int, const Mlp& model) {
                // Score against clean test labels when they are known.
                LabeledDataset scored = test;
                if (test.clean_labels) scored.given_labels = *test.clean_labels;
                result.test_accuracy_per_epoch.push_back(accuracy(model, scored));
              });
  const auto best = std::max_element(result.test_accuracy_per_epoch.begin(), result.test_accuracy_per_epoch.end());
  result.best_test_accuracy = *best;
  result.best_epoch = static_cast<int>(best - result.test_accuracy_per_epoch.begin());
  result.final_test_accuracy = result.test_accuracy_per_epoch.back();
  return result;
}

RetrainResult filter_and_retrain(const LabeledDataset& train, const NoiseReport& report,
                                 const LabeledDataset& test, const TrainConfig& cfg) {
  if (report.num_examples != train.size()) throw ArgumentError("report does not match training set size");
  return retrain_without(train, report.noisy_indices, test, cfg);
}

std::vector<int> random_subset(int num_examples, int count, std::uint64_t seed) {
  if (count < 0 || count > num_examples) throw ArgumentError("random subset size out of range");
  std::vector<int> ids(static_cast<std::size_t>(num_examples));
  std::iota(ids.begin(), ids.end(), 0);
  Rng rng(derive_seed(seed, "random-removal"));
  for (int i = 0; i < count; ++i) {
    const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(num_examples - i)));
    std::swap(ids[i], ids[j]);
  }
  ids.resize(static_cast<std::size_t>(count));
  std::sort(ids.begin(), ids.end());
  return ids;
}

// ---------------------------------------------------------------------------
// Serialization

nlohmann::json to_json(const BmmFit& fit) {
  return {{"alpha", fit.alpha},
          {"beta", fit.beta},
          {"weight", fit.weight},
          {"means", {fit.mean(0), fit.mean(1)}},
          {"threshold", fit.threshold},
          {"threshold_fallback", fit.threshold_fallback},
          {"low_component", fit.low_component},
          {"converged", fit.converged},
          {"iterations", fit.iterations},
          {"log_likelihood", fit.log_likelihood},
          {"log_likelihood_history", fit.log_likelihood_history},
          {"restart", fit.restart}};
}

BmmFit bmm_from_json(const nlohmann::json& j) {
  BmmFit fit;
  fit.alpha = j.at("alpha").get<std::array<double, 2>>();
  fit.beta = j.at("beta").get<std::array<double, 2>>();
  fit.weight = j.at("weight").get<std::array<double, 2>>();
  fit.threshold = j.at("threshold").get<double>();
  fit.threshold_fallback = j.value("threshold_fallback", false);
  fit.low_component = j.at("low_component").get<int>();
  fit.converged = j.at("converged").get<bool>();
  fit.iterations = j.at("iterations").get<int>();
  fit.log_likelihood = j.at("log_likelihood").get<double>();
  fit.restart = j.value("restart", 0);
  if (j.contains("log_likelihood_history"))
    fit.log_likelihood_history = j.at("log_likelihood_history").get<std::vector<double>>();
  return fit;
}

namespace {

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

std::optional<double> optional_double(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

}  // namespace

nlohmann::json to_json(const NoiseReport& r) {
  nlohmann::json j;
  j["format"] = "disagree-noise-report";
  j["format_version"] = kNoiseReportVersion;
  j["noise_estimate"] = r.noise_estimate;
  j["num_examples"] = r.num_examples;
  j["flagged_count"] = r.noisy_indices.size();
  j["score_used"] = to_string(r.score_used);
  j["orientation"] = r.orientation == Orientation::LowIsNoisy ? "low_is_noisy" : "high_is_noisy";
  j["degenerate"] = r.degenerate;
  j["normalization"] = {{"offset", r.norm_offset}, {"scale", r.norm_scale}};
  j["bmm"] = r.bmm ? to_json(*r.bmm) : nlohmann::json();
  if (r.metrics) {
    const auto& m = *r.metrics;
    j["metrics"] = {{"f1", optional_json(m.f1)},
                    {"precision", optional_json(m.precision)},
                    {"recall", optional_json(m.recall)},
                    {"estimate_abs_error", m.estimate_abs_error},
                    {"true_rate", m.true_rate},
                    {"true_positives", m.true_positives},
                    {"flagged", m.flagged},
                    {"truly_noisy", m.truly_noisy}};
  }
  j["provenance"] = r.provenance;
  j["noisy_indices"] = r.noisy_indices;
  return j;
}

NoiseReport noise_report_from_json(const nlohmann::json& j) {
  if (j.value("format_version", 0) != kNoiseReportVersion)
    throw FormatError("unsupported noise report version");
  NoiseReport r;
  r.noise_estimate = j.at("noise_estimate").get<double>();
  r.num_examples = j.at("num_examples").get<int>();
  r.score_used = parse_score_kind(j.at("score_used").get<std::string>());
  r.orientation = j.at("orientation").get<std::string>() == "high_is_noisy" ? Orientation::HighIsNoisy
                                                                            : Orientation::LowIsNoisy;
  r.degenerate = j.at("degenerate").get<bool>();
  r.norm_offset = j.at("normalization").at("offset").get<double>();
  r.norm_scale = j.at("normalization").at("scale").get<double>();
  if (!j.at("bmm").is_null()) r.bmm = bmm_from_json(j.at("bmm"));
  if (j.contains("metrics")) {
    const auto& mj = j.at("metrics");
    IdentificationMetrics m;
    m.f1 = optional_double(mj, "f1");
    m.precision = optional_double(mj, "precision");
    m.recall = optional_double(mj, "recall");
    m.estimate_abs_error = mj.at("estimate_abs_error").get<double>();
    m.true_rate = mj.at("true_rate").get<double>();
    m.true_positives = mj.at("true_positives").get<int>();
    m.flagged = mj.at("flagged").get<int>();
    m.truly_noisy = mj.at("truly_noisy").get<int>();
    r.metrics = m;
  }
  r.provenance = j.at("provenance").get<std::map<std::string, std::string>>();
  r.noisy_indices = j.at("noisy_indices").get<std::vector<int>>();
  for (std::size_t k = 0; k < r.noisy_indices.size(); ++k) {
    const int i = r.noisy_indices[k];
    if (i < 0 || i >= r.num_examples || (k > 0 && i <= r.noisy_indices[k - 1]))
      throw FormatError("noisy indices must be sorted, unique and in range");
  }
  return r;
}

}  // namespace disagree
