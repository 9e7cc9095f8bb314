#include "disagree/bmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "disagree/error.hpp"
#include "disagree/rng.hpp"

namespace disagree {

double beta_log_pdf(double x, double alpha, double beta) {
  const double log_b = std::lgamma(alpha) + std::lgamma(beta) - std::lgamma(alpha + beta);
  return (alpha - 1.0) * std::log(x) + (beta - 1.0) * std::log1p(-x) - log_b;
}

double BmmFit::weighted_density(int k, double x) const {
  return weight[k] * std::exp(beta_log_pdf(x, alpha[k], beta[k]));
}

double BmmFit::posterior_low(double x) const {
  const double lo = std::log(weight[low_component]) +
                    beta_log_pdf(x, alpha[low_component], beta[low_component]);
  const int h = 1 - low_component;
  const double hi = std::log(weight[h]) + beta_log_pdf(x, alpha[h], beta[h]);
  return 1.0 / (1.0 + std::exp(hi - lo));
}

namespace {

constexpr double kMinShape = 1e-2;
constexpr double kMaxShape = 1e7;

struct Params {
  std::array<double, 2> a, b, w;
};

/// Weighted method of moments for one component. The concentration a+b is
/// capped at `max_concentration` so no component gets narrower than the
/// clamp margin; otherwise a pile of values sitting exactly on the clamp
/// becomes a spike that wins on likelihood alone.
std::pair<double, double> moments(std::span<const double> x, std::span<const double> r,
                                  double max_concentration) {
  double sw = 0.0, sx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sw += r[i];
    sx += r[i] * x[i];
  }
  const double mean = std::clamp(sx / sw, 1e-6, 1.0 - 1e-6);
  double sv = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) sv += r[i] * (x[i] - mean) * (x[i] - mean);
  const double upper = mean * (1.0 - mean);
  const double var = std::clamp(sv / sw, 1e-12, upper * (1.0 - 1e-6));
  // Clamp through the shared concentration so the mean survives.
  const double lo_c = kMinShape / std::min(mean, 1.0 - mean);
  const double hi_c = std::min(max_concentration, kMaxShape / std::max(mean, 1.0 - mean));
  const double common = std::clamp(upper / var - 1.0, lo_c, std::max(lo_c, hi_c));
  return {std::clamp(mean * common, kMinShape, kMaxShape),
          std::clamp((1.0 - mean) * common, kMinShape, kMaxShape)};
}

/// Expected complete-data log-likelihood term of one component (without the weight).
double component_q(std::span<const double> x, std::span<const double> r, double a, double b) {
  const double log_b = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (r[i] > 0.0) s += r[i] * ((a - 1.0) * std::log(x[i]) + (b - 1.0) * std::log1p(-x[i]) - log_b);
  return s;
}

/// E-step: fills responsibilities of component 1 and returns the log-likelihood.
double expectation(std::span<const double> x, const Params& p, std::vector<double>& r1) {
  double ll = 0.0;
  const double lw0 = std::log(p.w[0]), lw1 = std::log(p.w[1]);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double l0 = lw0 + beta_log_pdf(x[i], p.a[0], p.b[0]);
    const double l1 = lw1 + beta_log_pdf(x[i], p.a[1], p.b[1]);
    const double mx = std::max(l0, l1);
    const double lse = mx + std::log(std::exp(l0 - mx) + std::exp(l1 - mx));
    r1[i] = std::exp(l1 - lse);
    ll += lse;
  }
  return ll;
}

BmmFit run_em(std::span<const double> x, std::vector<double> r1, const BmmOptions& opt) {
  const std::size_t n = x.size();
  std::vector<double> r0(n);
  Params p{};
  // Initial M-step from the hard split.
  for (std::size_t i = 0; i < n; ++i) r0[i] = 1.0 - r1[i];
  for (int k = 0; k < 2; ++k) {
    const auto& r = k ? r1 : r0;
    double s = 0.0;
    for (double v : r) s += v;
    p.w[k] = s / n;
    std::tie(p.a[k], p.b[k]) = moments(x, r, 1.0 / opt.clamp);
  }

  BmmFit fit;
  double ll = expectation(x, p, r1);
  fit.log_likelihood_history.push_back(ll);
  int it = 0;
  for (; it < opt.max_iter; ++it) {
    for (std::size_t i = 0; i < n; ++i) r0[i] = 1.0 - r1[i];
    Params next = p;
    for (int k = 0; k < 2; ++k) {
      const auto& r = k ? r1 : r0;
      double s = 0.0;
      for (double v : r) s += v;
      next.w[k] = std::clamp(s / n, 1e-12, 1.0);
      if (s <= 0.0) continue;
      auto [ca, cb] = moments(x, r, 1.0 / opt.clamp);
      const double q_old = component_q(x, r, p.a[k], p.b[k]);
      // Backtrack in log-shape space until the component term does not drop.
      double step = 1.0;
      bool accepted = false;
      for (int tries = 0; tries < 40; ++tries, step *= 0.5) {
        const double ta = std::exp((1.0 - step) * std::log(p.a[k]) + step * std::log(ca));
        const double tb = std::exp((1.0 - step) * std::log(p.b[k]) + step * std::log(cb));
        if (component_q(x, r, ta, tb) >= q_old) {
          next.a[k] = ta;
          next.b[k] = tb;
          accepted = true;
          break;
        }
      }
      if (!accepted) {
        next.a[k] = p.a[k];
        next.b[k] = p.b[k];
      }
    }
    const double total_w = next.w[0] + next.w[1];
    next.w[0] /= total_w;
    next.w[1] = 1.0 - next.w[0];
    p = next;
    const double next_ll = expectation(x, p, r1);
    fit.log_likelihood_history.push_back(next_ll);
    const double gain = next_ll - ll;
    ll = next_ll;
    if (gain < opt.tol) {
      fit.converged = true;
      ++it;
      break;
    }
  }

  const int low = p.a[0] / (p.a[0] + p.b[0]) <= p.a[1] / (p.a[1] + p.b[1]) ? 0 : 1;
  fit.alpha = {p.a[low], p.a[1 - low]};
  fit.beta = {p.b[low], p.b[1 - low]};
  fit.weight = {p.w[low], p.w[1 - low]};
  fit.low_component = 0;
  fit.iterations = it;
  fit.log_likelihood = ll;
  return fit;
}

}  // namespace

BmmFit fit_bmm(std::span<const double> values, const BmmOptions& opt) {
  if (values.size() < 10) throw ArgumentError("fit_bmm needs at least 10 values");
  if (opt.restarts < 1 || opt.max_iter < 1) throw ArgumentError("fit_bmm: restarts and max_iter must be >= 1");
  if (!(opt.clamp > 0.0 && opt.clamp < 0.5)) throw ArgumentError("fit_bmm: clamp must be in (0, 0.5)");
  std::vector<double> x(values.begin(), values.end());
  for (double& v : x) {
    if (!std::isfinite(v)) throw ArgumentError("fit_bmm: non-finite value");
    v = std::clamp(v, opt.clamp, 1.0 - opt.clamp);
  }
  const auto [mn, mx] = std::minmax_element(x.begin(), x.end());
  if (*mn == *mx) throw DegenerateFitError("single mode; no fit");

  std::vector<double> sorted = x;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = x.size();

  BmmFit best;
  bool have_best = false;
  for (int restart = 0; restart < opt.restarts; ++restart) {
    double cut;
    if (restart == 0) {
      cut = sorted[n / 2];
    } else if (restart == 1) {
      cut = 0.5 * (sorted.front() + sorted.back());
    } else {
      Rng rng(derive_seed(opt.seed, "bmm-restart", static_cast<std::uint64_t>(restart)));
      cut = sorted[static_cast<std::size_t>(rng.uniform(0.2, 0.8) * n)];
    }
    // Values at or above the cut start in the high component. When the cut
    // equals the minimum everything would land high, so split strictly above.
    const bool strict = cut == sorted.front();
    std::vector<double> r1(n);
    for (std::size_t i = 0; i < n; ++i) r1[i] = (strict ? x[i] > cut : x[i] >= cut) ? 1.0 : 0.0;
    BmmFit fit = run_em(x, std::move(r1), opt);
    fit.restart = restart;
    if (!have_best || fit.log_likelihood > best.log_likelihood) {
      best = std::move(fit);
      have_best = true;
    }
  }

  if (best.mean(1) - best.mean(0) <= 1e-3) throw DegenerateFitError("components not separated; no fit");
  const auto t = intersection_threshold(best);
  best.threshold = t.value;
  best.threshold_fallback = t.fallback;
  return best;
}

Threshold intersection_threshold(const BmmFit& fit) {
  const int lo = fit.low_component, hi = 1 - lo;
  const double m_lo = fit.mean(lo), m_hi = fit.mean(hi);
  if (!(m_hi - m_lo > 1e-3)) throw ArgumentError("component means are not separated");
  auto g = [&](double t) {
    return (std::log(fit.weight[lo]) + beta_log_pdf(t, fit.alpha[lo], fit.beta[lo])) -
           (std::log(fit.weight[hi]) + beta_log_pdf(t, fit.alpha[hi], fit.beta[hi]));
  };
  constexpr int kGrid = 1024;
  const double mid = 0.5 * (m_lo + m_hi);
  double best_dist = std::numeric_limits<double>::infinity();
  double best_a = 0.0, best_b = 0.0;
  bool found = false;
  double prev_t = m_lo, prev_g = g(m_lo);
  for (int k = 1; k < kGrid; ++k) {
    const double t = m_lo + (m_hi - m_lo) * k / (kGrid - 1);
    const double gt = g(t);
    if ((prev_g > 0.0) != (gt > 0.0) || prev_g == 0.0) {
      const double d = std::abs(0.5 * (prev_t + t) - mid);
      if (d < best_dist) {
        best_dist = d;
        best_a = prev_t;
        best_b = t;
        found = true;
      }
    }
    prev_t = t;
    prev_g = gt;
  }
  if (!found) return {mid, true};
  double ga = g(best_a);
  if (ga == 0.0) return {best_a, false};
  for (int it = 0; it < 200 && best_b - best_a > 1e-15; ++it) {
    const double c = 0.5 * (best_a + best_b);
    const double gc = g(c);
    if (gc == 0.0) return {c, false};
    if ((gc > 0.0) == (ga > 0.0)) {
      best_a = c;
      ga = gc;
    } else {
      best_b = c;
    }
  }
  return {0.5 * (best_a + best_b), false};
}

std::vector<DensityPoint> density_curve(const BmmFit& fit, int points) {
  if (points < 2) throw ArgumentError("density curve needs at least two points");
  std::vector<DensityPoint> out;
  const int lo = fit.low_component, hi = 1 - lo;
  for (int k = 0; k < points; ++k) {
    const double x = 1e-3 + (1.0 - 2e-3) * k / (points - 1);
    const double a = fit.weighted_density(lo, x), b = fit.weighted_density(hi, x);
    out.push_back({x, a, b, a + b});
  }
  return out;
}

}  // namespace disagree
