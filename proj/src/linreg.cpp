#include "disagree/linreg.hpp"

#include <cmath>

#include <Eigen/Dense>

#include "disagree/error.hpp"
#include "disagree/rng.hpp"
#include "disagree/trainer.hpp"

namespace disagree {

namespace {

double largest_eigenvalue(const Eigen::MatrixXd& sym) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

Eigen::MatrixXd errors(const Eigen::MatrixXd& w, const Eigen::MatrixXd& x, const Eigen::RowVectorXd& y) {
  Eigen::MatrixXd e = w * x;
  e.rowwise() -= y;
  return e;
}

}  // namespace

void LinRegExperiment::validate() const {
  if (x_train.cols() != y_train.size()) throw ArgumentError("x_train columns must match y_train");
  if (x_test.cols() != y_test.size()) throw ArgumentError("x_test columns must match y_test");
  if (x_test.rows() != x_train.rows()) throw ArgumentError("train and test dimensions differ");
  if (models < 1) throw ArgumentError("need at least one model");
  if (steps < 0) throw ArgumentError("steps must be >= 0");
  if (!(lr >= 0.0)) throw ArgumentError("learning rate must be >= 0");
  const double lam = largest_eigenvalue(x_train * x_train.transpose());
  if (!(lr * lam < 2.0)) throw ArgumentError("unstable learning rate: lr * ||Sxx|| >= 2");
}

LinRegExperiment make_linreg_experiment(const LinRegSetup& s) {
  if (s.dim < 1 || s.train_size < 1 || s.test_size < 1) throw ArgumentError("linreg sizes must be positive");
  Rng rng(derive_seed(s.seed, "linreg-data"));
  LinRegExperiment exp;
  Eigen::RowVectorXd teacher(s.dim);
  for (int j = 0; j < s.dim; ++j) teacher[j] = rng.normal() / std::sqrt(static_cast<double>(s.dim));
  exp.x_train.resize(s.dim, s.train_size);
  exp.x_test.resize(s.dim, s.test_size);
  for (int c = 0; c < s.train_size; ++c)
    for (int j = 0; j < s.dim; ++j) exp.x_train(j, c) = rng.normal();
  for (int c = 0; c < s.test_size; ++c)
    for (int j = 0; j < s.dim; ++j) exp.x_test(j, c) = rng.normal();
  exp.y_train = teacher * exp.x_train;
  for (int c = 0; c < s.train_size; ++c) exp.y_train[c] += s.label_noise * rng.normal();
  exp.y_test = teacher * exp.x_test;
  exp.models = s.models;
  exp.lr = s.lr_fraction * 2.0 / largest_eigenvalue(exp.x_train * exp.x_train.transpose());
  exp.steps = s.steps;
  exp.init_scale = s.init_scale;
  exp.seed = s.seed;
  return exp;
}

double disagreement(const Eigen::MatrixXd& e) {
  const Eigen::Index q = e.rows();
  double total = 0.0;
  for (Eigen::Index i = 0; i < q; ++i)
    for (Eigen::Index j = 0; j < q; ++j) total += (e.row(i) - e.row(j)).squaredNorm();
  return total / (2.0 * static_cast<double>(q) * static_cast<double>(q));
}

std::vector<StepDiagnostics> run_experiment(const LinRegExperiment& exp) {
  exp.validate();
  const auto& xt = exp.x_test;
  std::vector<StepDiagnostics> out;
  out.reserve(static_cast<std::size_t>(exp.steps));
  Eigen::MatrixXd prev;
  const Eigen::MatrixXd init = linear_init(exp.models, exp.dim(), exp.init_scale, exp.seed);
  run_linear_gd(exp.x_train, exp.y_train, init, exp.steps, exp.lr, [&](int step, const Eigen::MatrixXd& w) {
    if (step == 0) {
      prev = w;
      return;
    }
    StepDiagnostics d;
    d.step = step - 1;
    const Eigen::MatrixXd e_test = errors(prev, xt, exp.y_test);
    const Eigen::MatrixXd e_test_next = errors(w, xt, exp.y_test);
    const Eigen::MatrixXd e_train = errors(prev, exp.x_train, exp.y_train);
    const Eigen::MatrixXd e_train_next = errors(w, exp.x_train, exp.y_train);
    const Eigen::MatrixXd grad = e_train * exp.x_train.transpose();  // Delta(i,i)
    const Eigen::MatrixXd cross = e_test * xt.transpose();           // Delta(i,t)
    const Eigen::MatrixXd step_on_test = grad * xt;                  // Delta(i,i) X(t)
    d.disag = disagreement(e_test);
    d.disag_next = disagreement(e_test_next);
    d.bookkeeping_error = (e_test_next - (e_test - exp.lr * step_on_test)).cwiseAbs().maxCoeff();
    for (int i = 0; i < exp.models; ++i) {
      d.test_sq_error.push_back(e_test.row(i).squaredNorm());
      d.test_sq_error_next.push_back(e_test_next.row(i).squaredNorm());
      d.train_loss.push_back(0.5 * e_train.row(i).squaredNorm());
      d.train_loss_next.push_back(0.5 * e_train_next.row(i).squaredNorm());
      const bool over = d.test_sq_error_next.back() > d.test_sq_error.back() &&
                        d.train_loss_next.back() < d.train_loss.back();
      d.overfit.push_back(over ? 1 : 0);
      d.overfit_count += over;
      d.grad_dot_cross.push_back(grad.row(i).dot(cross.row(i)));
      d.step_on_test_sq.push_back(step_on_test.row(i).squaredNorm());
    }
    out.push_back(std::move(d));
    prev = w;
  });
  return out;
}

Lemma1Check check_lemma1(const std::vector<StepDiagnostics>& diagnostics, double lr) {
  Lemma1Check check;
  for (const auto& d : diagnostics) {
    std::vector<std::int8_t> row;
    for (std::size_t i = 0; i < d.overfit.size(); ++i) {
      const double c = d.grad_dot_cross[i];
      const double first_order = 2.0 * lr * std::abs(c);
      const double residual = lr * lr * d.step_on_test_sq[i];
      if (c == 0.0 || !(residual < 0.1 * first_order)) {
        row.push_back(-1);
        ++check.excluded;
        continue;
      }
      const double change = d.test_sq_error_next[i] - d.test_sq_error[i];
      const bool agree = (change > 0.0) == (-c > 0.0) && change != 0.0;
      row.push_back(agree ? 1 : 0);
      ++check.included;
      check.agreeing += agree;
    }
    check.table.push_back(std::move(row));
  }
  return check;
}

OverfitAgreementSummary summarize_overfit(const std::vector<StepDiagnostics>& diagnostics) {
  OverfitAgreementSummary s;
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  const double n = static_cast<double>(diagnostics.size());
  for (const auto& d : diagnostics) {
    const double change = d.disag_next - d.disag;
    if (d.all_overfit() && !d.overfit.empty()) {
      ++s.all_overfit_steps;
      s.disag_decreasing += change < 0.0;
      s.disag_increasing += change > 0.0;
    }
    const double x = d.overfit_count;
    sx += x;
    sy += change;
    sxx += x * x;
    syy += change * change;
    sxy += x * change;
  }
  if (n > 1) {
    const double cov = sxy - sx * sy / n;
    const double vx = sxx - sx * sx / n, vy = syy - sy * sy / n;
    s.overfit_vs_disag_change = vx > 0 && vy > 0 ? cov / std::sqrt(vx * vy) : 0.0;
  }
  return s;
}

Lemma2Check check_lemma2(const LinRegExperiment& exp) {
  exp.validate();
  const Eigen::MatrixXd sxx = exp.x_train * exp.x_train.transpose();
  const Eigen::RowVectorXd syx = exp.y_train * exp.x_train.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sxx);
  const auto& ev = es.eigenvalues();
  if (!(ev.minCoeff() > 1e-10 * std::max(1.0, ev.maxCoeff()))) throw ArgumentError("Sxx is singular");

  Lemma2Check check;
  check.contraction = (1.0 - exp.lr * ev.array()).abs().maxCoeff();
  if (!(check.contraction < 1.0)) throw ArgumentError("||I - lr Sxx|| must be < 1");

  check.closed_form = sxx.ldlt().solve(syx.transpose()).transpose();
  // (I - lr Sxx)^steps through the eigendecomposition.
  const Eigen::VectorXd powered = (1.0 - exp.lr * ev.array()).pow(exp.steps);
  const Eigen::MatrixXd decay = es.eigenvectors() * powered.asDiagonal() * es.eigenvectors().transpose();
  check.finite_step_mean = check.closed_form * (Eigen::MatrixXd::Identity(exp.dim(), exp.dim()) - decay);

  const Eigen::MatrixXd init = linear_init(exp.models, exp.dim(), exp.init_scale, exp.seed);
  const Eigen::MatrixXd w = run_linear_gd(exp.x_train, exp.y_train, init, exp.steps, exp.lr);
  check.empirical_mean = w.colwise().mean();
  check.deviation = (check.empirical_mean - check.closed_form).norm();
  return check;
}

}  // namespace disagree
