#include "disagree/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <numeric>
#include <string>
#include <thread>

#include "disagree/error.hpp"
#include "disagree/rng.hpp"

namespace disagree {

void TrainConfig::validate() const {
  if (ensemble_size < 1) throw ArgumentError("ensemble_size must be >= 1");
  if (epochs < 1) throw ArgumentError("epochs must be >= 1");
  if (batch_size < 1) throw ArgumentError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ArgumentError("learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ArgumentError("momentum must be in [0,1)");
  if (!(weight_decay >= 0.0)) throw ArgumentError("weight_decay must be >= 0");
  if (hidden_units < 0) throw ArgumentError("hidden_units must be >= 0");
}

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("DISAGREE_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

namespace {

void record_rows(EnsembleTrace& trace, int epoch, int model, std::span<const int> ids,
                 const Eigen::MatrixXd& logits) {
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    if (trace.has_logits()) {
      Eigen::RowVectorXd l = logits.row(row);
      trace.set_logits(epoch, model, ids[r], std::span<const double>(l.data(), static_cast<std::size_t>(l.size())));
    } else {
      Eigen::Index best;
      logits.row(row).maxCoeff(&best);
      trace.set_prediction(epoch, model, ids[r], static_cast<int>(best));
    }
  }
}

}  // namespace

Mlp train_model(const LabeledDataset& ds, const TrainConfig& cfg, std::uint64_t model_seed,
                EnsembleTrace* trace, int model_index, const EpochCallback& on_epoch) {
  cfg.validate();
  const int m = ds.size();
  if (m == 0) throw ArgumentError("cannot train on an empty dataset");

  Mlp model(ds.dim(), cfg.hidden_units, ds.num_classes);
  Rng init_rng(derive_seed(model_seed, "init"));
  model.initialize(init_rng);
  Rng order_rng(derive_seed(model_seed, "batches"));

  Eigen::VectorXd velocity = Eigen::VectorXd::Zero(model.parameter_count());
  Eigen::VectorXd grad;
  Eigen::MatrixXd batch_x, batch_logits;
  std::vector<int> order(m), batch_y;
  std::iota(order.begin(), order.end(), 0);
  const int batches = (m + cfg.batch_size - 1) / cfg.batch_size;
  std::vector<std::uint8_t> visited(m);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = cfg.learning_rate;
    if (cfg.schedule == LrSchedule::Cosine) lr *= 0.5 * (1.0 + std::cos(M_PI * epoch / cfg.epochs));

    if (cfg.sample_with_replacement) {
      for (int& id : order) id = static_cast<int>(order_rng.below(static_cast<std::uint64_t>(m)));
    } else {
      order_rng.shuffle(std::span<int>(order));
    }
    std::fill(visited.begin(), visited.end(), 0);

    for (int b = 0; b < batches; ++b) {
      const int begin = b * cfg.batch_size;
      const int end = std::min(m, begin + cfg.batch_size);
      std::span<const int> ids(order.data() + begin, static_cast<std::size_t>(end - begin));
      batch_x.resize(static_cast<Eigen::Index>(ids.size()), ds.dim());
      batch_y.resize(ids.size());
      for (std::size_t r = 0; r < ids.size(); ++r) {
        batch_x.row(static_cast<Eigen::Index>(r)) = ds.features.row(ids[r]);
        batch_y[r] = ds.given_labels[ids[r]];
      }
      const double loss = model.loss(batch_x, batch_y, &grad, &batch_logits);
      if (!std::isfinite(loss) || !grad.allFinite())
        throw TrainingError("model " + std::to_string(model_index) + " diverged at epoch " +
                            std::to_string(epoch));
      // Predictions are taken at visit time, before this batch's update.
      if (trace && !cfg.end_of_epoch_eval) {
        record_rows(*trace, epoch, model_index, ids, batch_logits);
        for (int id : ids) visited[id] = 1;
      }
      if (cfg.weight_decay > 0.0) grad += cfg.weight_decay * model.parameters();
      velocity = cfg.momentum * velocity + grad;
      model.parameters() -= lr * velocity;
      if (!model.parameters().allFinite())
        throw TrainingError("model " + std::to_string(model_index) + " diverged at epoch " +
                            std::to_string(epoch));
    }

    if (trace) {
      std::vector<int> pending;
      for (int i = 0; i < m; ++i)
        if (cfg.end_of_epoch_eval || !visited[i]) pending.push_back(i);
      if (!pending.empty()) {
        Eigen::MatrixXd x(static_cast<Eigen::Index>(pending.size()), ds.dim());
        for (std::size_t r = 0; r < pending.size(); ++r) x.row(static_cast<Eigen::Index>(r)) = ds.features.row(pending[r]);
        record_rows(*trace, epoch, model_index, pending, model.logits(x));
      }
    }
    if (on_epoch) on_epoch(epoch, model);
  }
  return model;
}

EnsembleTrace train_ensemble(const LabeledDataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  if (ds.size() == 0) throw ArgumentError("cannot train on an empty dataset");
  EnsembleTrace trace(cfg.epochs, cfg.ensemble_size, ds.given_labels, ds.num_classes, cfg.record_logits);
  trace.set_seed(cfg.seed);

  // Each worker owns disjoint model rows of the trace, so no locking is needed.
  const int workers = std::min(resolve_threads(cfg.threads), cfg.ensemble_size);
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(cfg.ensemble_size));
  std::atomic<int> next{0};
  auto work = [&] {
    for (int i = next++; i < cfg.ensemble_size; i = next++) {
      try {
        train_model(ds, cfg, cfg.seed ^ static_cast<std::uint64_t>(i), &trace, i);
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(work);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return trace;
}

std::vector<int> predict(const Mlp& model, const Eigen::MatrixXd& features) {
  const Eigen::MatrixXd z = model.logits(features);
  std::vector<int> out(static_cast<std::size_t>(z.rows()));
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    Eigen::Index best;
    z.row(r).maxCoeff(&best);
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

double accuracy(const Mlp& model, const LabeledDataset& ds) {
  if (ds.size() == 0) throw ArgumentError("accuracy of an empty dataset");
  const auto pred = predict(model, ds.features);
  int hits = 0;
  for (int i = 0; i < ds.size(); ++i) hits += pred[i] == ds.given_labels[i];
  return static_cast<double>(hits) / ds.size();
}

// ---------------------------------------------------------------------------

Eigen::MatrixXd run_linear_gd(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& y,
                              const Eigen::MatrixXd& init, int steps, double lr,
                              const LinearStepCallback& on_step) {
  if (x.cols() != y.size()) throw ArgumentError("X columns must match y length");
  if (init.cols() != x.rows()) throw ArgumentError("weight dimension must match X rows");
  if (steps < 0) throw ArgumentError("steps must be >= 0");
  const Eigen::MatrixXd sxx = x * x.transpose();
  const Eigen::RowVectorXd syx = y * x.transpose();
  Eigen::MatrixXd w = init;
  if (on_step) on_step(0, w);
  for (int s = 1; s <= steps; ++s) {
    Eigen::MatrixXd step = w * sxx;
    step.rowwise() -= syx;
    w -= lr * step;
    if (!w.allFinite() || w.cwiseAbs().maxCoeff() > 1e12)
      throw TrainingError("linear GD diverged at step " + std::to_string(s));
    if (on_step) on_step(s, w);
  }
  return w;
}

Eigen::MatrixXd linear_init(int models, int dim, double init_scale, std::uint64_t seed) {
  if (models < 1 || dim < 1) throw ArgumentError("linear_init: sizes must be positive");
  Eigen::MatrixXd w(models, dim);
  for (int q = 0; q < models; ++q) {
    Rng rng(derive_seed(seed, "linear-init", static_cast<std::uint64_t>(q)));
    for (int j = 0; j < dim; ++j) w(q, j) = init_scale * rng.normal();
  }
  return w;
}

std::vector<Eigen::MatrixXd> train_linear_ensemble(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& y,
                                                   int models, int steps, double lr, std::uint64_t seed,
                                                   double init_scale) {
  if (models < 1) throw ArgumentError("need at least one model");
  std::vector<Eigen::MatrixXd> snapshots;
  snapshots.reserve(static_cast<std::size_t>(steps) + 1);
  run_linear_gd(x, y, linear_init(models, static_cast<int>(x.rows()), init_scale, seed), steps, lr,
                [&](int, const Eigen::MatrixXd& w) { snapshots.push_back(w); });
  return snapshots;
}

}  // namespace disagree
