#include "disagree/mlp.hpp"

#include <cmath>

#include "disagree/error.hpp"

namespace disagree {

namespace {

using ConstMap = Eigen::Map<const Eigen::MatrixXd>;
using Map = Eigen::Map<Eigen::MatrixXd>;

}  // namespace

Mlp::Mlp(int input_dim, int hidden_units, int num_classes)
    : input_dim_(input_dim), hidden_(hidden_units), classes_(num_classes) {
  if (input_dim < 1 || hidden_units < 0 || num_classes < 2)
    throw ArgumentError("invalid MLP shape");
  const Eigen::Index p = hidden_ > 0
                             ? Eigen::Index{hidden_} * input_dim_ + hidden_ + Eigen::Index{classes_} * hidden_ + classes_
                             : Eigen::Index{classes_} * input_dim_ + classes_;
  params_ = Eigen::VectorXd::Zero(p);
}

void Mlp::initialize(Rng& rng) {
  Eigen::Index k = 0;
  auto fill = [&](Eigen::Index count, int fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Eigen::Index j = 0; j < count; ++j) params_[k++] = rng.uniform(-bound, bound);
  };
  if (hidden_ > 0) {
    fill(Eigen::Index{hidden_} * input_dim_ + hidden_, input_dim_);
    fill(Eigen::Index{classes_} * hidden_ + classes_, hidden_);
  } else {
    fill(Eigen::Index{classes_} * input_dim_ + classes_, input_dim_);
  }
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p = logits.colwise() - logits.rowwise().maxCoeff();
  p = p.array().exp();
  p.array().colwise() /= p.rowwise().sum().array();
  return p;
}

Eigen::MatrixXd Mlp::logits(const Eigen::MatrixXd& x) const {
  const double* w = params_.data();
  if (hidden_ == 0) {
    ConstMap weight(w, classes_, input_dim_);
    Eigen::Map<const Eigen::RowVectorXd> bias(w + classes_ * input_dim_, classes_);
    return (x * weight.transpose()).rowwise() + bias;
  }
  ConstMap w1(w, hidden_, input_dim_);
  Eigen::Map<const Eigen::RowVectorXd> b1(w + hidden_ * input_dim_, hidden_);
  const double* w2p = w + hidden_ * input_dim_ + hidden_;
  ConstMap w2(w2p, classes_, hidden_);
  Eigen::Map<const Eigen::RowVectorXd> b2(w2p + classes_ * hidden_, classes_);
  Eigen::MatrixXd h = ((x * w1.transpose()).rowwise() + b1).cwiseMax(0.0);
  return (h * w2.transpose()).rowwise() + b2;
}

double Mlp::loss(const Eigen::MatrixXd& x, std::span<const int> labels, Eigen::VectorXd* grad,
                 Eigen::MatrixXd* logits_out) const {
  const Eigen::Index batch = x.rows();
  if (batch == 0 || static_cast<Eigen::Index>(labels.size()) != batch)
    throw ArgumentError("batch and label sizes differ");
  const double* w = params_.data();

  Eigen::MatrixXd pre, h, z;
  if (hidden_ == 0) {
    ConstMap weight(w, classes_, input_dim_);
    Eigen::Map<const Eigen::RowVectorXd> bias(w + classes_ * input_dim_, classes_);
    z = (x * weight.transpose()).rowwise() + bias;
  } else {
    ConstMap w1(w, hidden_, input_dim_);
    Eigen::Map<const Eigen::RowVectorXd> b1(w + hidden_ * input_dim_, hidden_);
    const double* w2p = w + hidden_ * input_dim_ + hidden_;
    ConstMap w2(w2p, classes_, hidden_);
    Eigen::Map<const Eigen::RowVectorXd> b2(w2p + classes_ * hidden_, classes_);
    pre = (x * w1.transpose()).rowwise() + b1;
    h = pre.cwiseMax(0.0);
    z = (h * w2.transpose()).rowwise() + b2;
  }

  // log-sum-exp per row for a stable cross-entropy.
  const Eigen::VectorXd row_max = z.rowwise().maxCoeff();
  Eigen::MatrixXd shifted = z.colwise() - row_max;
  Eigen::MatrixXd expz = shifted.array().exp();
  const Eigen::VectorXd sums = expz.rowwise().sum();
  double total = 0.0;
  for (Eigen::Index r = 0; r < batch; ++r) total += std::log(sums[r]) - shifted(r, labels[r]);
  const double mean_loss = total / static_cast<double>(batch);

  if (grad) {
    Eigen::MatrixXd dz = expz.array().colwise() / sums.array();
    for (Eigen::Index r = 0; r < batch; ++r) dz(r, labels[r]) -= 1.0;
    dz /= static_cast<double>(batch);
    grad->resize(params_.size());
    double* g = grad->data();
    if (hidden_ == 0) {
      Map(g, classes_, input_dim_) = dz.transpose() * x;
      Eigen::Map<Eigen::RowVectorXd>(g + classes_ * input_dim_, classes_) = dz.colwise().sum();
    } else {
      const double* w2p = w + hidden_ * input_dim_ + hidden_;
      ConstMap w2(w2p, classes_, hidden_);
      double* g2 = g + hidden_ * input_dim_ + hidden_;
      Map(g2, classes_, hidden_) = dz.transpose() * h;
      Eigen::Map<Eigen::RowVectorXd>(g2 + classes_ * hidden_, classes_) = dz.colwise().sum();
      Eigen::MatrixXd dh = (dz * w2).array() * (pre.array() > 0.0).cast<double>();
      Map(g, hidden_, input_dim_) = dh.transpose() * x;
      Eigen::Map<Eigen::RowVectorXd>(g + hidden_ * input_dim_, hidden_) = dh.colwise().sum();
    }
  }
  if (logits_out) *logits_out = std::move(z);
  return mean_loss;
}

}  // namespace disagree
