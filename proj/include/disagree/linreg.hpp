#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

namespace disagree {

/// An ensemble of linear regressors trained by full-batch GD on one shared
/// design matrix, observed on a separate test set.
struct LinRegExperiment {
  Eigen::MatrixXd x_train;  // d x M, one example per column
  Eigen::RowVectorXd y_train;
  Eigen::MatrixXd x_test;  // d x N
  Eigen::RowVectorXd y_test;
  int models = 16;
  double lr = 1e-3;
  int steps = 1000;
  double init_scale = 1.0;
  std::uint64_t seed = 0;

  int dim() const { return static_cast<int>(x_train.rows()); }
  void validate() const;
};

struct LinRegSetup {
  int dim = 20;
  int train_size = 15;
  int test_size = 200;
  double label_noise = 1.0;  // std of noise added to training targets only
  int models = 16;
  /// Learning rate as a fraction of 2 / lambda_max(Sxx).
  double lr_fraction = 0.05;
  int steps = 2000;
  double init_scale = 0.1;
  std::uint64_t seed = 0;
};

/// Gaussian inputs, targets from a random linear teacher; training targets
/// get additive Gaussian noise, test targets stay clean.
LinRegExperiment make_linreg_experiment(const LinRegSetup& setup);

/// Diagnostics of the GD transition from step `step` to `step + 1`.
struct StepDiagnostics {
  int step = 0;
  double disag = 0.0;       // DisAg before the update
  double disag_next = 0.0;  // DisAg after the update
  std::vector<double> test_sq_error;       // ||e(i,t)||^2 before
  std::vector<double> test_sq_error_next;  // ||e~(i,t)||^2 after
  std::vector<double> train_loss;          // 0.5 ||e(i,i)||^2 before
  std::vector<double> train_loss_next;
  std::vector<std::uint8_t> overfit;       // test error grew while train loss fell
  std::vector<double> grad_dot_cross;      // Delta(i,i) . Delta(i,t)
  std::vector<double> step_on_test_sq;     // ||Delta(i,i) X(t)||^2
  double bookkeeping_error = 0.0;  // max |e~ - (e - lr Delta(i,i) X(t))|
  int overfit_count = 0;

  bool all_overfit() const { return overfit_count == static_cast<int>(overfit.size()); }
};

/// (1 / 2Q^2) sum_ij ||e_i - e_j||^2 over the rows of a Q x N error matrix.
double disagreement(const Eigen::MatrixXd& test_errors);

/// Train the ensemble and record the diagnostics of every step.
std::vector<StepDiagnostics> run_experiment(const LinRegExperiment& exp);

struct Lemma1Check {
  /// [step][model]: -1 excluded by the residual screen, 0 signs differ, 1 signs agree.
  std::vector<std::vector<std::int8_t>> table;
  int included = 0;
  int excluded = 0;
  int agreeing = 0;
  double agreement_rate() const { return included ? static_cast<double>(agreeing) / included : 1.0; }
};

/// Compares sign(change in test error) with sign(-Delta(i,i).Delta(i,t)) on
/// steps whose exact second-order residual lr^2 ||Delta(i,i) X(t)||^2 is
/// below 10% of the first-order term 2 lr |Delta(i,i).Delta(i,t)|.
Lemma1Check check_lemma1(const std::vector<StepDiagnostics>& diagnostics, double lr);

struct OverfitAgreementSummary {
  int all_overfit_steps = 0;
  int disag_decreasing = 0;  // among all-overfit steps
  int disag_increasing = 0;
  /// Pearson correlation of (#overfitting models) with DisAg(s+1) - DisAg(s).
  double overfit_vs_disag_change = 0.0;
  double decreasing_fraction() const {
    return all_overfit_steps ? static_cast<double>(disag_decreasing) / all_overfit_steps : 0.0;
  }
};

OverfitAgreementSummary summarize_overfit(const std::vector<StepDiagnostics>& diagnostics);

struct Lemma2Check {
  Eigen::RowVectorXd empirical_mean;    // mean over models of W after `steps`
  Eigen::RowVectorXd closed_form;       // Syx Sxx^{-1}
  Eigen::RowVectorXd finite_step_mean;  // Syx Sxx^{-1} (I - (I - lr Sxx)^steps), the zero-init limit
  double deviation = 0.0;               // ||empirical_mean - closed_form||
  double contraction = 0.0;             // ||I - lr Sxx||_2
};

/// Throws ArgumentError when Sxx is singular or ||I - lr Sxx|| >= 1.
Lemma2Check check_lemma2(const LinRegExperiment& exp);

}  // namespace disagree
