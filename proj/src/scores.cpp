#include "disagree/scores.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "disagree/error.hpp"

namespace disagree {

namespace {

void require_logits(const EnsembleTrace& trace, const char* score) {
  if (!trace.has_logits()) throw FidelityError(std::string(score) + " needs a trace with logits");
}

void require_epochs(const EnsembleTrace& trace) {
  if (trace.epoch_set().empty()) throw ArgumentError("epoch set is empty");
}

int correct_count(const EnsembleTrace& trace, int epoch, int example) {
  int hits = 0;
  for (int i = 0; i < trace.models(); ++i) hits += trace.correct(epoch, i, example);
  return hits;
}

double log_sum_exp(std::span<const double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

/// Average of f(logits, label) over models and the epoch set, per example.
template <typename F>
std::vector<double> average_over_cells(const EnsembleTrace& trace, F f) {
  require_epochs(trace);
  const auto& labels = trace.labels();
  std::vector<double> out(static_cast<std::size_t>(trace.examples()));
  const double denom = static_cast<double>(trace.models()) * trace.epoch_set().size();
  for (int m = 0; m < trace.examples(); ++m) {
    double s = 0.0;
    for (int e : trace.epoch_set())
      for (int i = 0; i < trace.models(); ++i) s += f(trace.logits(e, i, m), labels[m]);
    out[m] = s / denom;
  }
  return out;
}

double label_probability(std::span<const double> logits, int y) {
  return std::exp(logits[y] - log_sum_exp(logits));
}

}  // namespace

double tpa(const EnsembleTrace& trace, int epoch, int example) {
  if (epoch < 0 || epoch >= trace.epochs() || example < 0 || example >= trace.examples())
    throw ArgumentError("tpa index out of range");
  return static_cast<double>(correct_count(trace, epoch, example)) / trace.models();
}

std::vector<double> elp(const EnsembleTrace& trace) {
  require_epochs(trace);
  // Integer counts first so that elp * N * |E| is exact.
  std::vector<double> out(static_cast<std::size_t>(trace.examples()));
  const double denom = static_cast<double>(trace.models()) * trace.epoch_set().size();
  for (int m = 0; m < trace.examples(); ++m) {
    long hits = 0;
    for (int e : trace.epoch_set()) hits += correct_count(trace, e, m);
    out[m] = static_cast<double>(hits) / denom;
  }
  return out;
}

std::vector<double> cum_loss(const EnsembleTrace& trace) {
  require_logits(trace, "CumLoss");
  return average_over_cells(trace, [](std::span<const double> l, int y) { return log_sum_exp(l) - l[y]; });
}

std::vector<double> mean_margin(const EnsembleTrace& trace) {
  require_logits(trace, "MeanMargin");
  if (trace.num_classes() < 2) throw ArgumentError("MeanMargin needs at least two classes");
  return average_over_cells(trace, [](std::span<const double> l, int y) {
    double other = -INFINITY;
    for (int j = 0; j < static_cast<int>(l.size()); ++j)
      if (j != y) other = std::max(other, l[j]);
    return l[y] - other;
  });
}

std::vector<double> logits_mean(const EnsembleTrace& trace) {
  require_logits(trace, "LM");
  return average_over_cells(trace, label_probability);
}

ScoreTable compute_scores(const EnsembleTrace& trace) {
  ScoreTable t;
  t.elp = elp(trace);
  if (trace.has_logits()) {
    t.cum_loss = cum_loss(trace);
    t.mean_margin = mean_margin(trace);
    t.lm = logits_mean(trace);
  }
  return t;
}

BiSeries bi_series(const EnsembleTrace& trace) {
  BiSeries s;
  s.bi.resize(static_cast<std::size_t>(trace.epochs()));
  const double m = trace.examples();
  for (int e = 0; e < trace.epochs(); ++e) {
    int all = 0, none = 0;
    for (int x = 0; x < trace.examples(); ++x) {
      const int hits = correct_count(trace, e, x);
      all += hits == trace.models();
      none += hits == 0;
    }
    s.bi[e] = std::sqrt(all / m) + std::sqrt(none / m);
  }
  s.max_bi_epoch = static_cast<int>(std::max_element(s.bi.begin(), s.bi.end()) - s.bi.begin());
  return s;
}

std::vector<int> epochs_through_max_bi(const EnsembleTrace& trace) {
  std::vector<int> out(static_cast<std::size_t>(bi_series(trace).max_bi_epoch) + 1);
  for (std::size_t e = 0; e < out.size(); ++e) out[e] = static_cast<int>(e);
  return out;
}

double wasserstein_on_grid(std::span<const double> p, std::span<const double> q, double spacing) {
  if (p.size() != q.size() || p.empty()) throw ArgumentError("distributions must share a nonempty support");
  double cp = 0.0, cq = 0.0, total = 0.0;
  for (std::size_t k = 0; k + 1 < p.size(); ++k) {
    cp += p[k];
    cq += q[k];
    total += std::abs(cp - cq);
  }
  return total * spacing;
}

std::vector<double> binomial_pmf(int n, double p) {
  std::vector<double> pmf(static_cast<std::size_t>(n) + 1, 0.0);
  if (p <= 0.0) {
    pmf.front() = 1.0;
    return pmf;
  }
  if (p >= 1.0) {
    pmf.back() = 1.0;
    return pmf;
  }
  for (int k = 0; k <= n; ++k) {
    const double log_c = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
    pmf[k] = std::exp(log_c + k * std::log(p) + (n - k) * std::log1p(-p));
  }
  return pmf;
}

std::vector<BinomialDistance> binomial_distance(const EnsembleTrace& trace, const Mask& noisy_mask) {
  if (static_cast<int>(noisy_mask.size()) != trace.examples()) throw ArgumentError("mask size mismatch");
  const int n = trace.models();
  std::vector<BinomialDistance> out(static_cast<std::size_t>(trace.epochs()));
  for (int e = 0; e < trace.epochs(); ++e) {
    std::vector<double> hist[2] = {std::vector<double>(n + 1, 0.0), std::vector<double>(n + 1, 0.0)};
    long hits[2] = {0, 0};
    int count[2] = {0, 0};
    for (int m = 0; m < trace.examples(); ++m) {
      const int g = noisy_mask[m] ? 1 : 0;
      const int k = correct_count(trace, e, m);
      hist[g][k] += 1.0;
      hits[g] += k;
      ++count[g];
    }
    for (int g = 0; g < 2; ++g) {
      if (count[g] == 0) continue;
      for (double& h : hist[g]) h /= count[g];
      const double p_hat = static_cast<double>(hits[g]) / (static_cast<double>(count[g]) * n);
      const double d = wasserstein_on_grid(hist[g], binomial_pmf(n, p_hat), 1.0 / n);
      (g ? out[e].noisy : out[e].clean) = d;
    }
  }
  return out;
}

std::vector<int> learning_times(const EnsembleTrace& trace, int persistence) {
  if (persistence < 1) throw ArgumentError("persistence must be >= 1");
  std::vector<int> out(static_cast<std::size_t>(trace.examples()), -1);
  const int epochs = trace.epochs();
  for (int m = 0; m < trace.examples(); ++m) {
    int best = -1;
    for (int i = 0; i < trace.models(); ++i) {
      // Scan backwards tracking the current run of correct epochs.
      int run = 0, first = -1;
      for (int e = epochs - 1; e >= 0; --e) {
        run = trace.correct(e, i, m) ? run + 1 : 0;
        if (run >= persistence || (run > 0 && e + run == epochs)) first = e;
      }
      if (first >= 0 && (best < 0 || first < best)) best = first;
    }
    out[m] = best;
  }
  return out;
}

SlopeTable slope_analysis(const EnsembleTrace& trace, const Mask& noisy_mask, int min_bucket,
                          int persistence) {
  require_logits(trace, "slope analysis");
  if (static_cast<int>(noisy_mask.size()) != trace.examples()) throw ArgumentError("mask size mismatch");
  SlopeTable table;
  if (std::none_of(noisy_mask.begin(), noisy_mask.end(), [](auto v) { return v != 0; })) return table;

  const auto times = learning_times(trace, persistence);
  std::map<int, std::vector<int>> buckets[2];
  for (int m = 0; m < trace.examples(); ++m)
    if (times[m] >= 0) buckets[noisy_mask[m] ? 1 : 0][times[m]].push_back(m);

  std::vector<int> all_times;
  for (auto& b : buckets)
    for (auto& [t, ids] : b) all_times.push_back(t);
  std::sort(all_times.begin(), all_times.end());
  all_times.erase(std::unique(all_times.begin(), all_times.end()), all_times.end());

  const auto& labels = trace.labels();
  auto curves = [&](const std::vector<int>& ids, int e) {
    double agree = 0.0, prob = 0.0;
    for (int m : ids) {
      agree += tpa(trace, e, m);
      double p = 0.0;
      for (int i = 0; i < trace.models(); ++i) p += label_probability(trace.logits(e, i, m), labels[m]);
      prob += p / trace.models();
    }
    return std::pair{agree / ids.size(), prob / ids.size()};
  };

  for (int t : all_times) {
    const auto& clean = buckets[0][t];
    const auto& noisy = buckets[1][t];
    if (static_cast<int>(clean.size()) < min_bucket || static_cast<int>(noisy.size()) < min_bucket) {
      table.dropped.push_back({t, static_cast<int>(clean.size()), static_cast<int>(noisy.size())});
      continue;
    }
    for (int e = 0; e < trace.epochs(); ++e) {
      const auto [ca, cp] = curves(clean, e);
      const auto [na, np] = curves(noisy, e);
      table.rows.push_back({t, e, ca - na, cp - np, (ca - na) - (cp - np)});
    }
  }
  return table;
}

}  // namespace disagree
