#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace disagree {

/// Per-epoch x per-model x per-example record of ensemble predictions.
///
/// Layout is C-order [epoch][model][example] (and [..][class] for logits).
/// Correctness is always derived from `predicted` and the given labels the
/// trace was recorded against; it is never set independently.
class EnsembleTrace {
 public:
  EnsembleTrace() = default;
  EnsembleTrace(int epochs, int models, std::vector<int> labels, int num_classes, bool with_logits);

  int epochs() const { return epochs_; }
  int models() const { return models_; }
  int examples() const { return static_cast<int>(labels_.size()); }
  int num_classes() const { return num_classes_; }
  bool has_logits() const { return !logits_.empty(); }

  const std::vector<int>& labels() const { return labels_; }

  std::size_t cell(int epoch, int model, int example) const {
    return (static_cast<std::size_t>(epoch) * models_ + model) * labels_.size() + example;
  }

  int predicted(int epoch, int model, int example) const { return predicted_[cell(epoch, model, example)]; }
  bool correct(int epoch, int model, int example) const { return correct_[cell(epoch, model, example)] != 0; }

  std::span<const double> logits(int epoch, int model, int example) const;

  /// Record a prediction; correctness follows from the label.
  void set_prediction(int epoch, int model, int example, int predicted);
  /// Record logits and set the prediction to their argmax (first on ties).
  void set_logits(int epoch, int model, int example, std::span<const double> logits);

  /// Epochs integrated by the cumulative scores (the set E). Defaults to all.
  const std::vector<int>& epoch_set() const { return epoch_set_; }
  void set_epoch_set(std::vector<int> epochs);

  std::uint64_t seed() const { return seed_; }
  void set_seed(std::uint64_t seed) { seed_ = seed; }

  const std::vector<std::int32_t>& predicted_data() const { return predicted_; }
  const std::vector<std::uint8_t>& correct_data() const { return correct_; }
  const std::vector<double>& logits_data() const { return logits_; }

  /// Copy of the trace restricted to the given models (in that order).
  EnsembleTrace select_models(const std::vector<int>& models) const;
  /// Copy restricted to a contiguous block of epochs [0, count).
  EnsembleTrace first_epochs(int count) const;

  friend bool operator==(const EnsembleTrace&, const EnsembleTrace&) = default;

 private:
  int epochs_ = 0;
  int models_ = 0;
  int num_classes_ = 0;
  std::vector<int> labels_;
  std::vector<std::int32_t> predicted_;
  std::vector<std::uint8_t> correct_;
  std::vector<double> logits_;
  std::vector<int> epoch_set_;
  std::uint64_t seed_ = 0;
};

/// Binary container: magic "DGNT", u16 version, header, then C-order tensors
/// each followed by its CRC32. All integers and doubles little-endian.
void save_trace(const EnsembleTrace& trace, const std::filesystem::path& path);
EnsembleTrace load_trace(const std::filesystem::path& path);

inline constexpr std::uint16_t kTraceFormatVersion = 1;

enum class IngestFormat { Jsonl, Csv };

/// Assemble a dense trace from per-cell records produced by an external
/// trainer. Records may arrive in any order; duplicates, gaps and
/// out-of-range indices are errors. `labels` are the given labels the
/// predictions are scored against. When `num_classes` is absent it is
/// inferred from the logit width or the largest label/prediction.
EnsembleTrace ingest_external(const std::filesystem::path& path, IngestFormat format,
                              const std::vector<int>& labels,
                              std::optional<int> num_classes = std::nullopt);

}  // namespace disagree
