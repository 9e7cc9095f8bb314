#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Core>

#include "disagree/dataset.hpp"
#include "disagree/mlp.hpp"
#include "disagree/trace.hpp"

namespace disagree {

enum class LrSchedule { Constant, Cosine };

struct TrainConfig {
  int ensemble_size = 10;
  int epochs = 20;
  int batch_size = 32;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.0;
  int hidden_units = 32;
  std::uint64_t seed = 0;
  bool record_logits = true;
  LrSchedule schedule = LrSchedule::Constant;
  /// Score every example with the end-of-epoch model instead of at visit time.
  bool end_of_epoch_eval = false;
  /// Draw each epoch's batches uniformly with replacement (literal Alg. 2).
  bool sample_with_replacement = false;
  /// Worker threads for ensemble members; 0 reads DISAGREE_THREADS (default 1).
  int threads = 0;

  /// Throws ArgumentError when a bound is violated.
  void validate() const;
};

/// Called after every epoch with the model as it stands at the end of it.
using EpochCallback = std::function<void(int epoch, const Mlp& model)>;

/// Train one model on `ds` with the given per-model seed. When `trace` is
/// non-null, row `model_index` of it is filled in.
Mlp train_model(const LabeledDataset& ds, const TrainConfig& cfg, std::uint64_t model_seed,
                EnsembleTrace* trace = nullptr, int model_index = 0,
                const EpochCallback& on_epoch = nullptr);

/// Train cfg.ensemble_size independently initialized models and record the
/// per-epoch predictions of each on every example. Model i uses seed
/// cfg.seed ^ i, so dropping a model leaves the other rows unchanged.
EnsembleTrace train_ensemble(const LabeledDataset& ds, const TrainConfig& cfg);

std::vector<int> predict(const Mlp& model, const Eigen::MatrixXd& features);
double accuracy(const Mlp& model, const LabeledDataset& ds);

/// Worker-thread count from cfg or the DISAGREE_THREADS environment variable.
int resolve_threads(int requested);

// ---------------------------------------------------------------------------
// Linear regression by full-batch gradient descent.
//
// Weights are row vectors in R^d acting on X in R^{d x M}; loss is
// 0.5 * ||W X - y||^2, so the gradient is W Sxx - Syx with Sxx = X X^T and
// Syx = y X^T.

/// Called with (step, Q x d weights). Step 0 is the initialization.
using LinearStepCallback = std::function<void(int step, const Eigen::MatrixXd& weights)>;

/// Run `steps` GD updates from `init` (Q x d), reporting every state.
/// Throws TrainingError when weights become non-finite or exceed 1e12.
Eigen::MatrixXd run_linear_gd(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& y,
                              const Eigen::MatrixXd& init, int steps, double lr,
                              const LinearStepCallback& on_step = nullptr);

/// Zero-mean Gaussian initialization with standard deviation `init_scale`;
/// model q draws from its own derived stream.
Eigen::MatrixXd linear_init(int models, int dim, double init_scale, std::uint64_t seed);

/// Snapshots [steps + 1] of the Q x d weight matrix.
std::vector<Eigen::MatrixXd> train_linear_ensemble(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& y,
                                                   int models, int steps, double lr, std::uint64_t seed,
                                                   double init_scale = 1.0);

}  // namespace disagree
