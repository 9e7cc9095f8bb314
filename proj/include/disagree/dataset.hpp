#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace disagree {

using Labels = std::vector<int>;
using Mask = std::vector<std::uint8_t>;

/// Features (one row per example) with given labels and, when known, the
/// clean labels and which examples were corrupted. Example ids are row indices.
struct LabeledDataset {
  Eigen::MatrixXd features;  // M x d
  Labels given_labels;
  std::optional<Labels> clean_labels;
  std::optional<Mask> corruption_mask;
  int num_classes = 0;
  /// Name of each dense class id; ids follow sorted order of the names.
  std::vector<std::string> class_names;

  int size() const { return static_cast<int>(given_labels.size()); }
  int dim() const { return static_cast<int>(features.cols()); }
  bool has_ground_truth() const { return clean_labels.has_value() && corruption_mask.has_value(); }

  /// Throws ArgumentError if any invariant is violated.
  void validate() const;

  /// Rows selected by `ids`, in that order. Ground truth is carried along.
  LabeledDataset subset(const std::vector<int>& ids) const;
};

enum class NoiseKind { Symmetric, AsymmetricPermutation };

struct NoiseSpec {
  NoiseKind kind = NoiseKind::Symmetric;
  double rate = 0.0;
  /// class -> replacement class; empty means the cyclic shift l -> (l+1) mod C.
  std::vector<int> permutation;
  std::uint64_t seed = 0;
};

/// Gaussian clusters (unit covariance) with class means at pairwise
/// distance >= separation. Examples are stored class-major.
LabeledDataset make_blobs(int num_classes, int per_class, int dim, double separation,
                          std::uint64_t seed);

/// Corrupt exactly round(rate * M) labels chosen uniformly without replacement.
LabeledDataset inject_noise(const LabeledDataset& ds, const NoiseSpec& spec);

/// Default asymmetric mapping l -> (l+1) mod C.
std::vector<int> cyclic_permutation(int num_classes);

/// Number of examples inject_noise corrupts for a given rate.
int corrupted_count(double rate, int num_examples);

/// Reads a CSV with a header. Columns named `label` (or `given_label`) hold the
/// given label, `clean_label` the optional clean label and `corrupted` is
/// ignored (it is recomputed); every other column is a real-valued feature.
LabeledDataset load_csv(const std::filesystem::path& path);

/// Writes features..., given_label, clean_label, corrupted. Labels are written
/// as class names so that load_csv(save_csv(ds)) preserves the id mapping.
void save_csv(const LabeledDataset& ds, const std::filesystem::path& path);

/// Deterministic split into (train, test) with `test_fraction` of every class
/// held out.
std::pair<LabeledDataset, LabeledDataset> stratified_split(const LabeledDataset& ds,
                                                           double test_fraction,
                                                           std::uint64_t seed);

}  // namespace disagree
