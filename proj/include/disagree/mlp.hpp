#pragma once

#include <span>

#include <Eigen/Core>

#include "disagree/rng.hpp"

namespace disagree {

/// Classifier with at most one ReLU hidden layer and a softmax output.
/// hidden_units == 0 gives multinomial logistic regression.
///
/// All weights live in one flat vector (W1, b1, W2, b2 in that order, each
/// column-major) so the optimizer can treat the model as a point in R^P.
class Mlp {
 public:
  Mlp(int input_dim, int hidden_units, int num_classes);

  /// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases.
  void initialize(Rng& rng);

  int input_dim() const { return input_dim_; }
  int hidden_units() const { return hidden_; }
  int num_classes() const { return classes_; }
  Eigen::Index parameter_count() const { return params_.size(); }

  const Eigen::VectorXd& parameters() const { return params_; }
  Eigen::VectorXd& parameters() { return params_; }

  /// Rows of `x` are examples; returns a B x C matrix of pre-softmax logits.
  Eigen::MatrixXd logits(const Eigen::MatrixXd& x) const;

  /// Mean cross-entropy over the batch. When `grad` is non-null it receives
  /// the gradient with respect to parameters(); when `logits_out` is non-null
  /// it receives the forward-pass logits.
  double loss(const Eigen::MatrixXd& x, std::span<const int> labels, Eigen::VectorXd* grad = nullptr,
              Eigen::MatrixXd* logits_out = nullptr) const;

 private:
  int input_dim_;
  int hidden_;
  int classes_;
  Eigen::VectorXd params_;
};

/// Row-wise numerically stable softmax.
Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits);

}  // namespace disagree
