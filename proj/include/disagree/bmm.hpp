#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace disagree {

/// log of the Beta(alpha, beta) density at x in (0,1).
double beta_log_pdf(double x, double alpha, double beta);

struct BmmOptions {
  int max_iter = 500;
  double tol = 1e-7;
  std::uint64_t seed = 0;
  /// Restart 0 splits at the median, restart 1 at the midpoint of the value
  /// range, later restarts at a random quantile. Best log-likelihood wins.
  int restarts = 2;
  double clamp = 1e-4;
};

/// Two-component Beta mixture. Component 0 is always the one with the
/// smaller mean, so low_component is 0 after fit_bmm.
struct BmmFit {
  std::array<double, 2> alpha{};
  std::array<double, 2> beta{};
  std::array<double, 2> weight{};
  double threshold = 0.5;
  bool threshold_fallback = false;
  int low_component = 0;
  bool converged = false;
  int iterations = 0;
  double log_likelihood = 0.0;
  /// Log-likelihood after initialization and after every EM iteration of
  /// the winning restart.
  std::vector<double> log_likelihood_history;
  int restart = 0;

  double mean(int k) const { return alpha[k] / (alpha[k] + beta[k]); }
  /// w_k f_k(x) for a single component.
  double weighted_density(int k, double x) const;
  /// Posterior probability of the low component at x.
  double posterior_low(double x) const;
};

/// EM fit with weighted method-of-moments M-steps. A moment update is only
/// accepted if it does not lower the expected complete-data log-likelihood
/// (otherwise it is backtracked toward the previous parameters), so the
/// observed log-likelihood never decreases.
///
/// Throws ArgumentError for fewer than 10 values and DegenerateFitError when
/// the clamped values are all equal or the components cannot be separated.
BmmFit fit_bmm(std::span<const double> values, const BmmOptions& options = {});

struct Threshold {
  double value;
  bool fallback;  // no sign change between the means; midpoint used
};

/// Point between the component means where the weighted densities cross.
/// Throws ArgumentError when the means are closer than 1e-3.
Threshold intersection_threshold(const BmmFit& fit);

struct DensityPoint {
  double x, low, high, mixture;
};

/// Weighted component densities and their sum on an evenly spaced grid.
std::vector<DensityPoint> density_curve(const BmmFit& fit, int points = 200);

}  // namespace disagree
