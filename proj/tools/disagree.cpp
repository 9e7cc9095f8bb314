// disagree: command-line front end. Every stage reads and writes plain files
// so stages compose, and writes <stage>.config.toml next to its outputs.
#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "disagree/bmm.hpp"
#include "disagree/csv.hpp"
#include "disagree/dataset.hpp"
#include "disagree/error.hpp"
#include "disagree/linreg.hpp"
#include "disagree/pipeline.hpp"
#include "disagree/rng.hpp"
#include "disagree/scores.hpp"
#include "disagree/trace.hpp"
#include "disagree/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace disagree;

namespace {

constexpr int kConfigVersion = 1;

/// Missing files, bad column names and other input problems (exit code 1).
class InputError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Options that are also dumped to the resolved config.

std::string render(const std::string& v) {
  if (v.find('\'') != std::string::npos || v.find('\n') != std::string::npos)
    throw InputError("value contains a quote or newline: " + v);
  return "'" + v + "'";
}
std::string render(double v) { return csv::format_double(v); }
std::string render(int v) { return std::to_string(v); }
std::string render(std::uint64_t v) { return std::to_string(v); }
std::string render(bool v) { return v ? "true" : "false"; }

class OptionSet {
 public:
  explicit OptionSet(CLI::App* app) : app_(app) {}

  template <typename T>
  CLI::Option* add(const std::string& name, T& ref, const std::string& help) {
    entries_.push_back({name, [&ref] { return render(ref); }});
    return app_->add_option("--" + name, ref, help)->capture_default_str();
  }

  CLI::Option* flag(const std::string& name, bool& ref, const std::string& help) {
    entries_.push_back({name, [&ref] { return render(ref); }});
    return app_->add_flag("--" + name, ref, help);
  }

  std::string dump() const {
    std::string out;
    for (const auto& [name, fn] : entries_) out += name + "=" + fn() + "\n";
    return out;
  }

  CLI::App* app() const { return app_; }

 private:
  CLI::App* app_;
  std::vector<std::pair<std::string, std::function<std::string()>>> entries_;
};

struct Globals {
  std::uint64_t seed = 0;
  int config_version = kConfigVersion;
};

// ---------------------------------------------------------------------------
// File helpers

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw InputError("missing " + what + " (no path given)");
  if (!fs::is_regular_file(path)) throw InputError("missing input " + what + ": " + path);
}

fs::path prepare_out_dir(const std::string& dir) {
  if (dir.empty()) throw InputError("--out-dir is required");
  fs::create_directories(dir);
  return fs::path(dir);
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  return out;
}

void write_json(const fs::path& path, const json& j) {
  auto out = open_out(path);
  out << j.dump(2) << "\n";
}

json read_json(const std::string& path, const std::string& what) {
  require_file(path, what);
  std::ifstream in(path, std::ios::binary);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(what + ": " + e.what());
  }
}

void write_config(const fs::path& dir, const std::string& stage, const Globals& g, const OptionSet& opts) {
  auto out = open_out(dir / (stage + ".config.toml"));
  out << "# resolved configuration; rerun with: disagree --config <this file>\n";
  out << "config-version=" << g.config_version << "\n";
  out << "seed=" << g.seed << "\n";
  out << "[" << stage << "]\n" << opts.dump();
}

std::string fmt(double v) { return csv::format_double(v); }

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  if (text.empty()) return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    int v = 0;
    const auto r = std::from_chars(item.data(), item.data() + item.size(), v);
    if (r.ec != std::errc() || r.ptr != item.data() + item.size())
      throw InputError("not an integer list: " + text);
    out.push_back(v);
  }
  return out;
}

LabeledDataset load_dataset(const std::string& path, const std::string& what) {
  require_file(path, what);
  return load_csv(path);
}

// ---------------------------------------------------------------------------
// scores.csv

struct ScoreFile {
  std::map<std::string, std::vector<std::optional<double>>> columns;
  int rows = 0;

  std::vector<double> column(const std::string& name) const {
    const auto it = columns.find(name);
    if (it == columns.end()) throw InputError("scores file has no column " + name);
    std::vector<double> out;
    for (std::size_t i = 0; i < it->second.size(); ++i) {
      if (!it->second[i]) throw InputError("column " + name + " is empty at example " + std::to_string(i));
      out.push_back(*it->second[i]);
    }
    return out;
  }
};

ScoreFile read_scores(const std::string& path) {
  require_file(path, "scores");
  std::ifstream in(path, std::ios::binary);
  std::string line;
  long line_no = 0;
  std::vector<std::string> header;
  ScoreFile sf;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = csv::split_record(line, line_no);
    if (header.empty()) {
      header = fields;
      if (header.empty() || header[0] != "example_id") throw ParseError("scores header must start with example_id", line_no);
      continue;
    }
    if (fields.size() != header.size()) throw ParseError("expected " + std::to_string(header.size()) + " fields", line_no);
    if (fields[0] != std::to_string(sf.rows)) throw ParseError("example ids must be 0..M-1 in order", line_no);
    for (std::size_t c = 1; c < header.size(); ++c) {
      auto& col = sf.columns[header[c]];
      if (fields[c].empty()) {
        col.push_back(std::nullopt);
        continue;
      }
      double v = 0;
      const auto& f = fields[c];
      const auto r = std::from_chars(f.data(), f.data() + f.size(), v);
      if (r.ec != std::errc() || r.ptr != f.data() + f.size())
        throw ParseError("non-numeric value in column " + header[c], line_no);
      col.push_back(v);
    }
    ++sf.rows;
  }
  if (sf.rows == 0) throw InputError("scores file has no rows: " + path);
  return sf;
}

std::string score_column(ScoreKind kind) {
  switch (kind) {
    case ScoreKind::Elp:
      return "elp";
    case ScoreKind::CumLoss:
      return "cum_loss";
    case ScoreKind::MeanMargin:
      return "mean_margin";
  }
  return "elp";
}

// ---------------------------------------------------------------------------
// Stages. Each returns nothing and throws on failure.

struct GenData {
  int classes = 4, per_class = 500, dim = 2;
  double separation = 8.0, test_fraction = 0.0;
  std::string out_dir;

  void add(OptionSet& o) {
    o.add("classes", classes, "number of classes");
    o.add("per-class", per_class, "examples per class");
    o.add("dim", dim, "feature dimension");
    o.add("separation", separation, "distance between neighbouring class means");
    o.add("test-fraction", test_fraction, "fraction of every class written to test.csv (0 = none)");
    o.add("out-dir", out_dir, "output directory");
  }

  void run(const Globals& g) {
    const auto dir = prepare_out_dir(out_dir);
    auto ds = make_blobs(classes, per_class, dim, separation, derive_seed(g.seed, "gen-data"));
    if (test_fraction > 0.0) {
      auto [train, test] = stratified_split(ds, test_fraction, derive_seed(g.seed, "split"));
      save_csv(train, dir / "dataset.csv");
      save_csv(test, dir / "test.csv");
    } else {
      save_csv(ds, dir / "dataset.csv");
    }
  }
};

struct InjectNoise {
  std::string input, kind = "symmetric", permutation, out_dir;
  double rate = 0.2;

  void add(OptionSet& o) {
    o.add("input", input, "clean dataset CSV");
    o.add("kind", kind, "symmetric | asymmetric")->check(CLI::IsMember({"symmetric", "asymmetric"}));
    o.add("rate", rate, "fraction of labels to corrupt");
    o.add("permutation", permutation, "asymmetric mapping as comma list, class k -> entry k (default cyclic)");
    o.add("out-dir", out_dir, "output directory");
  }

  void run(const Globals& g) {
    auto ds = load_dataset(input, "dataset");
    const auto dir = prepare_out_dir(out_dir);
    NoiseSpec spec;
    spec.kind = kind == "asymmetric" ? NoiseKind::AsymmetricPermutation : NoiseKind::Symmetric;
    spec.rate = rate;
    spec.permutation = parse_int_list(permutation);
    if (!spec.permutation.empty() && spec.kind == NoiseKind::Symmetric)
      throw InputError("--permutation only applies to asymmetric noise");
    spec.seed = derive_seed(g.seed, "inject-noise");
    save_csv(inject_noise(ds, spec), dir / "noisy.csv");
  }
};

struct TrainOptions {
  int epochs = 20, batch_size = 32, hidden = 32;
  double lr = 0.05, momentum = 0.9, weight_decay = 0.0;
  std::string schedule = "constant";

  void add(OptionSet& o) {
    o.add("epochs", epochs, "training epochs");
    o.add("batch-size", batch_size, "mini-batch size");
    o.add("hidden", hidden, "hidden units (0 = linear softmax model)");
    o.add("lr", lr, "SGD learning rate");
    o.add("momentum", momentum, "SGD momentum");
    o.add("weight-decay", weight_decay, "L2 weight decay");
    o.add("schedule", schedule, "constant | cosine")->check(CLI::IsMember({"constant", "cosine"}));
  }

  TrainConfig config(std::uint64_t seed) const {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = batch_size;
    cfg.hidden_units = hidden;
    cfg.learning_rate = lr;
    cfg.momentum = momentum;
    cfg.weight_decay = weight_decay;
    cfg.schedule = schedule == "cosine" ? LrSchedule::Cosine : LrSchedule::Constant;
    cfg.seed = seed;
    return cfg;
  }
};

struct TrainEnsemble {
  std::string input, out_dir;
  int models = 10;
  TrainOptions train;
  bool end_of_epoch_eval = false, with_replacement = false, no_logits = false;

  void add(OptionSet& o) {
    o.add("input", input, "noisy dataset CSV");
    o.add("models", models, "ensemble size N");
    train.add(o);
    o.flag("end-of-epoch-eval", end_of_epoch_eval, "score with the end-of-epoch model instead of at visit time");
    o.flag("sample-with-replacement", with_replacement, "sample batches with replacement");
    o.flag("no-logits", no_logits, "record predictions only");
    o.add("out-dir", out_dir, "output directory");
  }

  void run(const Globals& g) {
    auto ds = load_dataset(input, "dataset");
    const auto dir = prepare_out_dir(out_dir);
    TrainConfig cfg = train.config(derive_seed(g.seed, "train-ensemble"));
    cfg.ensemble_size = models;
    cfg.end_of_epoch_eval = end_of_epoch_eval;
    cfg.sample_with_replacement = with_replacement;
    cfg.record_logits = !no_logits;
    save_trace(train_ensemble(ds, cfg), dir / "trace.dgnt");
  }
};

struct IngestTrace {
  std::string records, format = "jsonl", dataset, out_dir;
  int num_classes = 0;

  void add(OptionSet& o) {
    o.add("records", records, "per-cell records from an external trainer");
    o.add("format", format, "jsonl | csv")->check(CLI::IsMember({"jsonl", "csv"}));
    o.add("dataset", dataset, "dataset CSV supplying the given labels");
    o.add("num-classes", num_classes, "class count (0 = from the dataset)");
    o.add("out-dir", out_dir, "output directory");
  }

  void run(const Globals&) {
    auto ds = load_dataset(dataset, "dataset");
    require_file(records, "records");
    const auto dir = prepare_out_dir(out_dir);
    const int c = num_classes > 0 ? num_classes : ds.num_classes;
    auto trace = ingest_external(records, format == "csv" ? IngestFormat::Csv : IngestFormat::Jsonl,
                                 ds.given_labels, c);
    save_trace(trace, dir / "trace.dgnt");
  }
};

constexpr int kHistBins = 20;

struct Scores {
  std::string trace, dataset, out_dir;
  bool through_max_bi = false;
  int min_bucket = 10;

  void add(OptionSet& o) {
    o.add("trace", trace, "trace file (trace.dgnt)");
    o.add("dataset", dataset, "dataset CSV with ground truth (optional; enables truth-based outputs)");
    o.flag("through-max-bi", through_max_bi, "integrate scores over epochs [0, argmax BI] only");
    o.add("min-bucket", min_bucket, "smallest learning-time bucket kept by the slope analysis");
    o.add("out-dir", out_dir, "output directory");
  }

  void run(const Globals&) {
    require_file(trace, "trace");
    auto tr = load_trace(trace);
    std::optional<Mask> mask;
    if (!dataset.empty()) {
      auto ds = load_dataset(dataset, "dataset");
      if (ds.given_labels != tr.labels()) throw InputError("dataset labels do not match the trace");
      if (ds.corruption_mask) mask = ds.corruption_mask;
    }
    const auto dir = prepare_out_dir(out_dir);

    const auto bi = bi_series(tr);
    if (through_max_bi) tr.set_epoch_set(epochs_through_max_bi(tr));
    const auto table = compute_scores(tr);

    {
      auto out = open_out(dir / "scores.csv");
      csv::write_record(out, {"example_id", "elp", "cum_loss", "mean_margin", "lm", "is_noisy_truth"});
      auto opt = [](const std::optional<std::vector<double>>& v, int i) { return v ? fmt((*v)[i]) : std::string(); };
      for (int i = 0; i < tr.examples(); ++i)
        csv::write_record(out, {std::to_string(i), fmt(table.elp[i]), opt(table.cum_loss, i), opt(table.mean_margin, i),
                                opt(table.lm, i), mask ? std::to_string((*mask)[i]) : std::string()});
    }
    {
      auto out = open_out(dir / "bi.csv");
      csv::write_record(out, {"epoch", "bi"});
      for (std::size_t e = 0; e < bi.bi.size(); ++e) csv::write_record(out, {std::to_string(e), fmt(bi.bi[e])});
    }
    {
      // ELP histogram; values of exactly 1 go to the last bin.
      std::vector<int> all(kHistBins), clean(kHistBins), noisy(kHistBins);
      for (int i = 0; i < tr.examples(); ++i) {
        const int b = std::min(kHistBins - 1, static_cast<int>(table.elp[i] * kHistBins));
        ++all[b];
        if (mask) ++((*mask)[i] ? noisy : clean)[b];
      }
      auto out = open_out(dir / "elp_hist.csv");
      csv::write_record(out, {"bin_lo", "bin_hi", "all", "clean", "noisy"});
      for (int b = 0; b < kHistBins; ++b)
        csv::write_record(out, {fmt(static_cast<double>(b) / kHistBins), fmt(static_cast<double>(b + 1) / kHistBins),
                                std::to_string(all[b]), mask ? std::to_string(clean[b]) : std::string(),
                                mask ? std::to_string(noisy[b]) : std::string()});
    }

    json summary = {{"examples", tr.examples()},
                    {"epochs", tr.epochs()},
                    {"models", tr.models()},
                    {"epoch_set", tr.epoch_set()},
                    {"max_bi_epoch", bi.max_bi_epoch},
                    {"has_logits", tr.has_logits()}};
    if (mask) {
      double ce = 0, ne = 0;
      int cn = 0, nn = 0;
      for (int i = 0; i < tr.examples(); ++i) ((*mask)[i] ? (ne += table.elp[i], ++nn) : (ce += table.elp[i], ++cn));
      summary["mean_elp_clean"] = cn ? json(ce / cn) : json();
      summary["mean_elp_noisy"] = nn ? json(ne / nn) : json();

      const auto bd = binomial_distance(tr, *mask);
      auto out = open_out(dir / "binomial.csv");
      csv::write_record(out, {"epoch", "clean", "noisy"});
      for (std::size_t e = 0; e < bd.size(); ++e)
        csv::write_record(out, {std::to_string(e), bd[e].clean ? fmt(*bd[e].clean) : "", bd[e].noisy ? fmt(*bd[e].noisy) : ""});

      if (tr.has_logits()) {
        const auto slope = slope_analysis(tr, *mask, min_bucket);
        auto s = open_out(dir / "slope.csv");
        csv::write_record(s, {"learning_time", "epoch", "delta_agreement", "delta_logit", "difference"});
        for (const auto& r : slope.rows)
          csv::write_record(s, {std::to_string(r.learning_time), std::to_string(r.epoch), fmt(r.delta_agreement),
                                fmt(r.delta_logit), fmt(r.difference)});
        json dropped = json::array();
        for (const auto& d : slope.dropped)
          dropped.push_back({{"learning_time", d.learning_time}, {"clean", d.clean_count}, {"noisy", d.noisy_count}});
        summary["slope_dropped_buckets"] = dropped;
      }
    }
    write_json(dir / "scores_summary.json", summary);
  }
};

struct BmmCli {
  int max_iter = 500, restarts = 2;
  double tol = 1e-7;

  void add(OptionSet& o) {
    o.add("max-iter", max_iter, "EM iteration cap");
    o.add("tol", tol, "stop when the log-likelihood gain is below this");
    o.add("restarts", restarts, "initializations; best log-likelihood wins");
  }

  BmmOptions options(std::uint64_t seed) const {
    BmmOptions b;
    b.max_iter = max_iter;
    b.restarts = restarts;
    b.tol = tol;
    b.seed = seed;
    return b;
  }
};

/// Thrown after outputs for a degenerate fit have been written (exit code 2).
class DegenerateOutcome : public Error {
 public:
  using Error::Error;
};

struct FitBmm {
  std::string scores, score = "elp", out_dir;
  int density_points = 200;
  BmmCli bmm;

  void add(OptionSet& o) {
    o.add("scores", scores, "scores.csv");
    o.add("score", score, "elp | cum_loss | mean_margin")->check(CLI::IsMember({"elp", "cum_loss", "mean_margin"}));
    bmm.add(o);
    o.add("density-points", density_points, "grid size of bmm_density.csv");
    o.add("out-dir", out_dir, "output directory");
  }

  void run(const Globals& g) {
    const auto sf = read_scores(scores);
    const auto kind = parse_score_kind(score);
    const auto raw = sf.column(score_column(kind));
    const auto dir = prepare_out_dir(out_dir);
    double off = 0, sc = 1;
    const auto norm = normalize_scores(kind, raw, &off, &sc);
    const auto fit = fit_bmm(norm, bmm.options(derive_seed(g.seed, "bmm")));
    json j = to_json(fit);
    j["score_used"] = to_string(kind);
    j["normalization"] = {{"offset", off}, {"scale", sc}};
    write_json(dir / "bmm.json", j);
    auto out = open_out(dir / "bmm_density.csv");
    csv::write_record(out, {"x", "low", "high", "mixture"});
    for (const auto& p : density_curve(fit, density_points))
      csv::write_record(out, {fmt(p.x), fmt(p.low), fmt(p.high), fmt(p.mixture)});
  }
};

void write_report(const fs::path& dir, const NoiseReport& report) {
  write_json(dir / "noise_report.json", to_json(report));
  auto out = open_out(dir / "filtered-indices.txt");
  for (int i : report.noisy_indices) out << i << "\n";
}

struct Filter {
  std::string scores, score = "elp", bmm_path, out_dir;
  BmmCli bmm;

  void add(OptionSet& o) {
    o.add("scores", scores, "scores.csv");
    o.add("score", score, "elp | cum_loss | mean_margin")->check(CLI::IsMember({"elp", "cum_loss", "mean_margin"}));
    o.add("bmm", bmm_path, "reuse a fit written by fit-bmm instead of fitting again");
    bmm.add(o);
    o.add("out-dir", out_dir, "output directory");
  }

  void run(const Globals& g) {
    const auto sf = read_scores(scores);
    const auto kind = parse_score_kind(score);
    const auto raw = sf.column(score_column(kind));
    const auto dir = prepare_out_dir(out_dir);
    double off = 0, sc = 1;
    const auto norm = normalize_scores(kind, raw, &off, &sc);
    NoiseReport report;
    if (!bmm_path.empty()) {
      const json j = read_json(bmm_path, "bmm fit");
      if (j.value("score_used", std::string()) != to_string(kind))
        throw InputError("bmm fit was made for score " + j.value("score_used", std::string("?")));
      report.bmm = bmm_from_json(j);
      report.score_used = kind;
      apply_threshold(norm, report);
      report.provenance["bmm_source"] = "file";
    } else {
      report = disagreenet(norm, Orientation::LowIsNoisy, bmm.options(derive_seed(g.seed, "bmm")));
    }
    report.score_used = kind;
    report.norm_offset = off;
    report.norm_scale = sc;
    write_report(dir, report);
    if (report.degenerate) throw DegenerateOutcome("degenerate fit (single mode); no examples flagged");
  }
};

struct Evaluate {
  std::string report, dataset, out_dir;

  void add(OptionSet& o) {
    o.add("report", report, "noise_report.json");
    o.add("dataset", dataset, "dataset CSV with clean_label column");
    o.add("out-dir", out_dir, "output directory");
  }

  void run(const Globals&) {
    auto r = noise_report_from_json(read_json(report, "noise report"));
    auto ds = load_dataset(dataset, "dataset");
    if (!ds.corruption_mask) throw InputError("dataset has no ground truth (clean_label column)");
    if (ds.size() != r.num_examples) throw InputError("report and dataset sizes differ");
    const auto dir = prepare_out_dir(out_dir);
    const auto m = identification_metrics(r, *ds.corruption_mask);
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(); };
    write_json(dir / "evaluation.json", {{"noise_estimate", r.noise_estimate},
                                         {"true_rate", m.true_rate},
                                         {"estimate_abs_error", m.estimate_abs_error},
                                         {"f1", opt(m.f1)},
                                         {"precision", opt(m.precision)},
                                         {"recall", opt(m.recall)},
                                         {"true_positives", m.true_positives},
                                         {"flagged", m.flagged},
                                         {"truly_noisy", m.truly_noisy},
                                         {"score_used", to_string(r.score_used)},
                                         {"degenerate", r.degenerate}});
  }
};

struct Retrain {
  std::string train_path, test_path, remove = "report", report, out_dir;
  int random_count = -1;
  TrainOptions train;

  void add(OptionSet& o) {
    o.add("train", train_path, "training dataset CSV (noisy)");
    o.add("test", test_path, "held-out dataset CSV; scored against clean labels when present");
    o.add("remove", remove, "report | oracle | random | none")
        ->check(CLI::IsMember({"report", "oracle", "random", "none"}));
    o.add("report", report, "noise_report.json (for --remove report, and the default random count)");
    o.add("random-count", random_count, "examples removed by --remove random (-1 = report's flagged count)");
    train.add(o);
    o.add("out-dir", out_dir, "output directory");
  }

  void run(const Globals& g) {
    auto tr = load_dataset(train_path, "train dataset");
    auto te = load_dataset(test_path, "test dataset");
    std::optional<NoiseReport> rep;
    if (!report.empty()) rep = noise_report_from_json(read_json(report, "noise report"));
    std::vector<int> removed;
    if (remove == "report") {
      if (!rep) throw InputError("--remove report needs --report");
      removed = rep->noisy_indices;
    } else if (remove == "oracle") {
      if (!tr.corruption_mask) throw InputError("--remove oracle needs ground truth in the training set");
      for (int i = 0; i < tr.size(); ++i)
        if ((*tr.corruption_mask)[i]) removed.push_back(i);
    } else if (remove == "random") {
      int count = random_count;
      if (count < 0) {
        if (!rep) throw InputError("--remove random needs --random-count or --report");
        count = static_cast<int>(rep->noisy_indices.size());
      }
      if (count > tr.size()) throw InputError("random count exceeds the training set");
      removed = random_subset(tr.size(), count, derive_seed(g.seed, "retrain-random"));
    }
    if (rep && rep->num_examples != tr.size()) throw InputError("report and training set sizes differ");
    const auto dir = prepare_out_dir(out_dir);
    const auto res = retrain_without(tr, removed, te, train.config(derive_seed(g.seed, "retrain")));
    write_json(dir / "retrain.json", {{"remove", remove},
                                      {"removed", removed.size()},
                                      {"retained", res.retained_count},
                                      {"best_test_accuracy", res.best_test_accuracy},
                                      {"best_epoch", res.best_epoch},
                                      {"final_test_accuracy", res.final_test_accuracy}});
    auto out = open_out(dir / "retrain_curve.csv");
    csv::write_record(out, {"epoch", "test_accuracy"});
    for (std::size_t e = 0; e < res.test_accuracy_per_epoch.size(); ++e)
      csv::write_record(out, {std::to_string(e), fmt(res.test_accuracy_per_epoch[e])});
  }
};

struct LinregLab {
  LinRegSetup setup;
  int lemma2_models = 1024, lemma2_train = 60;
  bool skip_lemma2 = false;
  std::string q_sweep = "4,16,64", out_dir;

  void add(OptionSet& o) {
    o.add("dim", setup.dim, "input dimension d");
    o.add("train-size", setup.train_size, "training examples M");
    o.add("test-size", setup.test_size, "test examples");
    o.add("label-noise", setup.label_noise, "std of noise on training targets");
    o.add("models", setup.models, "ensemble size Q");
    o.add("lr-fraction", setup.lr_fraction, "learning rate as a fraction of 2 / lambda_max");
    o.add("steps", setup.steps, "gradient steps");
    o.add("init-scale", setup.init_scale, "std of the Gaussian initialization");
    o.add("lemma2-models", lemma2_models, "ensemble size for the mean-weight check");
    o.add("lemma2-train-size", lemma2_train, "training examples for the mean-weight check (needs >= dim)");
    o.flag("skip-lemma2", skip_lemma2, "skip the mean-weight check");
    o.add("q-sweep", q_sweep, "ensemble sizes for linreg_q_sensitivity.csv, comma list (empty skips)");
    o.add("out-dir", out_dir, "output directory");
  }

  void run(const Globals& g) {
    const auto dir = prepare_out_dir(out_dir);
    LinRegSetup s = setup;
    s.seed = derive_seed(g.seed, "linreg-lab");
    const auto exp = make_linreg_experiment(s);
    const auto diags = run_experiment(exp);
    const auto l1 = check_lemma1(diags, exp.lr);
    const auto summary = summarize_overfit(diags);

    auto out = open_out(dir / "linreg_steps.csv");
    csv::write_record(out, {"step", "disag", "disag_next", "overfit_count", "all_overfit", "lemma1_included",
                            "lemma1_agree", "mean_test_sq_error", "mean_train_loss", "bookkeeping_error"});
    double max_bookkeeping = 0.0;
    for (std::size_t k = 0; k < diags.size(); ++k) {
      const auto& d = diags[k];
      int inc = 0, agree = 0;
      for (auto v : l1.table[k]) {
        inc += v >= 0;
        agree += v == 1;
      }
      double te = 0, tl = 0;
      for (std::size_t i = 0; i < d.test_sq_error.size(); ++i) {
        te += d.test_sq_error[i];
        tl += d.train_loss[i];
      }
      const double q = static_cast<double>(d.test_sq_error.size());
      max_bookkeeping = std::max(max_bookkeeping, d.bookkeeping_error);
      csv::write_record(out, {std::to_string(d.step), fmt(d.disag), fmt(d.disag_next), std::to_string(d.overfit_count),
                              d.all_overfit() ? "1" : "0", std::to_string(inc), std::to_string(agree), fmt(te / q),
                              fmt(tl / q), fmt(d.bookkeeping_error)});
    }

    json j = {{"learning_rate", exp.lr},
              {"all_overfit_steps", summary.all_overfit_steps},
              {"disag_decreasing", summary.disag_decreasing},
              {"disag_increasing", summary.disag_increasing},
              {"decreasing_fraction", summary.decreasing_fraction()},
              {"overfit_vs_disag_change_pearson", summary.overfit_vs_disag_change},
              {"lemma1", {{"included", l1.included}, {"excluded", l1.excluded}, {"agreeing", l1.agreeing},
                          {"agreement_rate", l1.agreement_rate()}}},
              {"max_bookkeeping_error", max_bookkeeping}};
    // Same data and seed, only Q changes.
    const auto qs = parse_int_list(q_sweep);
    if (!qs.empty()) {
      auto qo = open_out(dir / "linreg_q_sensitivity.csv");
      csv::write_record(qo, {"models", "all_overfit_steps", "decreasing_fraction", "overfit_vs_disag_change_pearson",
                             "lemma1_agreement_rate"});
      for (int q : qs) {
        if (q < 1) throw InputError("--q-sweep entries must be >= 1");
        LinRegSetup sq = s;
        sq.models = q;
        const auto e = make_linreg_experiment(sq);
        const auto d = run_experiment(e);
        const auto sm = summarize_overfit(d);
        csv::write_record(qo, {std::to_string(q), std::to_string(sm.all_overfit_steps), fmt(sm.decreasing_fraction()),
                               fmt(sm.overfit_vs_disag_change), fmt(check_lemma1(d, e.lr).agreement_rate())});
      }
    }
    if (!skip_lemma2) {
      LinRegSetup s2 = s;
      s2.models = lemma2_models;
      s2.train_size = lemma2_train;
      s2.init_scale = 1.0;
      const auto c = check_lemma2(make_linreg_experiment(s2));
      auto row = [](const Eigen::RowVectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
      j["lemma2"] = {{"models", lemma2_models},
                     {"train_size", lemma2_train},
                     {"deviation", c.deviation},
                     {"bound", 4.0 * std::sqrt(static_cast<double>(s2.dim) / lemma2_models)},
                     {"contraction", c.contraction},
                     {"closed_form", row(c.closed_form)},
                     {"empirical_mean", row(c.empirical_mean)}};
    }
    write_json(dir / "linreg_summary.json", j);
  }
};

struct Report {
  std::string run_dir, out_dir;

  void add(OptionSet& o) {
    o.add("run-dir", run_dir, "directory to aggregate (searched recursively)");
    o.add("out-dir", out_dir, "where to write the report (default: run-dir)");
  }

  static std::vector<std::string> read_rows(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::vector<std::string> rows;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      rows.push_back(line);
    }
    return rows;
  }

  void run(const Globals&) {
    if (run_dir.empty() || !fs::is_directory(run_dir)) throw InputError("run directory not found: " + run_dir);
    static const std::vector<std::string> known = {"noise_report.json", "evaluation.json", "bi.csv",
                                                   "elp_hist.csv",      "retrain.json",    "linreg_summary.json",
                                                   "bmm.json",          "scores_summary.json"};
    std::map<std::string, std::vector<fs::path>> found;  // file name -> sorted paths
    for (const auto& entry : fs::recursive_directory_iterator(run_dir)) {
      if (!entry.is_regular_file()) continue;
      const auto name = entry.path().filename().string();
      if (std::find(known.begin(), known.end(), name) != known.end()) found[name].push_back(entry.path());
    }
    if (found.empty()) throw InputError("no artifacts in " + run_dir);
    for (auto& [_, v] : found) std::sort(v.begin(), v.end());

    const fs::path root(run_dir);
    auto rel = [&](const fs::path& p) {
      auto r = fs::relative(p.parent_path(), root).generic_string();
      return r.empty() ? std::string(".") : r;
    };
    const auto dir = prepare_out_dir(out_dir.empty() ? run_dir : out_dir);
    std::ostringstream txt;
    txt << "disagree run report: " << found.size() << " artifact kind(s)\n";

    {
      auto out = open_out(dir / "report_identification.csv");
      csv::write_record(out, {"run", "score", "noise_estimate", "true_rate", "estimate_abs_error", "f1", "precision",
                              "recall"});
      std::map<std::string, json> evals;
      for (const auto& p : found["evaluation.json"]) evals[rel(p)] = read_json(p.string(), "evaluation");
      auto num = [](const json& j, const char* k) {
        return j.contains(k) && !j.at(k).is_null() ? fmt(j.at(k).get<double>()) : std::string();
      };
      for (const auto& p : found["noise_report.json"]) {
        const auto r = noise_report_from_json(read_json(p.string(), "noise report"));
        const json e = evals.count(rel(p)) ? evals[rel(p)] : json::object();
        csv::write_record(out, {rel(p), to_string(r.score_used), fmt(r.noise_estimate), num(e, "true_rate"),
                                num(e, "estimate_abs_error"), num(e, "f1"), num(e, "precision"), num(e, "recall")});
        txt << "\n[" << rel(p) << "] noise report\n  score " << to_string(r.score_used) << ", estimate "
            << fmt(r.noise_estimate) << " (" << r.noisy_indices.size() << " of " << r.num_examples << " flagged)"
            << (r.degenerate ? ", degenerate fit" : "") << "\n";
        if (r.bmm) txt << "  threshold " << fmt(r.bmm->threshold) << "\n";
        if (!e.empty())
          txt << "  f1 " << num(e, "f1") << ", precision " << num(e, "precision") << ", recall " << num(e, "recall")
              << ", |estimate - true| " << num(e, "estimate_abs_error") << "\n";
      }
    }
    {
      auto out = open_out(dir / "report_bi.csv");
      csv::write_record(out, {"run", "epoch", "bi"});
      for (const auto& p : found["bi.csv"]) {
        const auto rows = read_rows(p);
        for (std::size_t k = 1; k < rows.size(); ++k) {
          if (rows[k].empty()) continue;
          auto f = csv::split_record(rows[k], static_cast<long>(k + 1));
          f.insert(f.begin(), rel(p));
          csv::write_record(out, f);
        }
      }
    }
    {
      auto out = open_out(dir / "report_elp_hist.csv");
      csv::write_record(out, {"run", "bin_lo", "bin_hi", "all", "clean", "noisy"});
      for (const auto& p : found["elp_hist.csv"]) {
        const auto rows = read_rows(p);
        for (std::size_t k = 1; k < rows.size(); ++k) {
          if (rows[k].empty()) continue;
          auto f = csv::split_record(rows[k], static_cast<long>(k + 1));
          f.insert(f.begin(), rel(p));
          csv::write_record(out, f);
        }
      }
    }
    for (const auto& p : found["scores_summary.json"]) {
      const auto j = read_json(p.string(), "scores summary");
      txt << "\n[" << rel(p) << "] scores\n  " << j.at("examples").get<int>() << " examples, "
          << j.at("models").get<int>() << " models, " << j.at("epochs").get<int>() << " epochs, BI peaks at epoch "
          << j.at("max_bi_epoch").get<int>() << "\n";
      if (j.contains("mean_elp_clean") && !j["mean_elp_clean"].is_null() && !j["mean_elp_noisy"].is_null())
        txt << "  mean ELP clean " << fmt(j["mean_elp_clean"].get<double>()) << ", noisy "
            << fmt(j["mean_elp_noisy"].get<double>()) << "\n";
    }
    for (const auto& p : found["retrain.json"]) {
      const auto j = read_json(p.string(), "retrain");
      txt << "\n[" << rel(p) << "] retrain (remove " << j.at("remove").get<std::string>() << ")\n  retained "
          << j.at("retained").get<int>() << ", best test accuracy " << fmt(j.at("best_test_accuracy").get<double>())
          << " at epoch " << j.at("best_epoch").get<int>() << ", final "
          << fmt(j.at("final_test_accuracy").get<double>()) << "\n";
    }
    for (const auto& p : found["linreg_summary.json"]) {
      const auto j = read_json(p.string(), "linreg summary");
      txt << "\n[" << rel(p) << "] linear regression\n  all-overfit steps " << j.at("all_overfit_steps").get<int>()
          << ", DisAg decreasing in " << fmt(j.at("decreasing_fraction").get<double>()) << " of them\n"
          << "  Lemma 1 agreement " << fmt(j.at("lemma1").at("agreement_rate").get<double>()) << " over "
          << j.at("lemma1").at("included").get<int>() << " included cells\n";
      if (j.contains("lemma2"))
        txt << "  mean-weight deviation " << fmt(j["lemma2"]["deviation"].get<double>()) << " (bound "
            << fmt(j["lemma2"]["bound"].get<double>()) << ")\n";
    }
    for (const auto& p : found["bmm.json"]) {
      const auto j = read_json(p.string(), "bmm fit");
      txt << "\n[" << rel(p) << "] bmm fit\n  means " << fmt(j["means"][0].get<double>()) << " / "
          << fmt(j["means"][1].get<double>()) << ", weights " << fmt(j["weight"][0].get<double>()) << " / "
          << fmt(j["weight"][1].get<double>()) << ", threshold " << fmt(j["threshold"].get<double>()) << "\n";
    }
    auto out = open_out(dir / "report.txt");
    out << txt.str();
  }
};

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const DegenerateOutcome*>(&e) || dynamic_cast<const DegenerateFitError*>(&e)) return 2;
  if (dynamic_cast<const TrainingError*>(&e)) return 3;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DisagreeNet: find noisy labels from ensemble agreement during training"};
  app.set_config("--config", "", "read options from a resolved config written by an earlier run");
  Globals globals;
  app.add_option("--seed", globals.seed, "global seed; every stage derives its own stream")->capture_default_str();
  app.add_option("--config-version", globals.config_version, "config format version")
      ->check(CLI::Range(kConfigVersion, kConfigVersion))
      ->group("");
  app.require_subcommand(1);

  GenData gen;
  InjectNoise inject;
  TrainEnsemble train;
  IngestTrace ingest;
  Scores scores;
  FitBmm fit;
  Filter filter;
  Evaluate evaluate;
  Retrain retrain;
  LinregLab linreg;
  Report report;

  std::vector<std::pair<OptionSet, std::function<void()>>> stages;
  auto stage = [&](const char* name, const char* help, auto& impl) {
    auto* sub = app.add_subcommand(name, help);
    sub->configurable();
    OptionSet opts(sub);
    impl.add(opts);
    stages.emplace_back(opts, [&impl, &globals] { impl.run(globals); });
  };
  stage("gen-data", "generate Gaussian blobs (dataset.csv, optional test.csv)", gen);
  stage("inject-noise", "corrupt labels symmetrically or by a class permutation (noisy.csv)", inject);
  stage("train-ensemble", "train N models and record per-epoch predictions (trace.dgnt)", train);
  stage("ingest-trace", "build trace.dgnt from an external trainer's per-cell records", ingest);
  stage("scores", "per-example scores, BI series and diagnostics from a trace", scores);
  stage("fit-bmm", "fit the two-component beta mixture to one score column", fit);
  stage("filter", "flag noisy examples (noise_report.json, filtered-indices.txt)", filter);
  stage("evaluate", "identification metrics of a report against ground truth", evaluate);
  stage("retrain", "train one model without the removed examples and score it on a test set", retrain);
  stage("linreg-lab", "linear-regression ensemble experiment on agreement and overfit", linreg);
  stage("report", "aggregate a run directory into report.txt and plot-data CSVs", report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  for (auto& [opts, run] : stages) {
    CLI::App* sub = opts.app();
    if (!sub->parsed()) continue;
    const std::string name = sub->get_name();
    try {
      run();
      // Written last so a failed stage leaves no config claiming success.
      std::string out_dir;
      if (auto* o = sub->get_option_no_throw("--out-dir"); o && !o->as<std::string>().empty())
        out_dir = o->as<std::string>();
      if (name == "report" && out_dir.empty()) out_dir = report.run_dir;
      write_config(out_dir, name, globals, opts);
      return 0;
    } catch (const DegenerateOutcome& e) {
      std::string out_dir = sub->get_option("--out-dir")->as<std::string>();
      write_config(out_dir, name, globals, opts);
      std::cerr << "disagree " << name << ": " << e.what() << "\n";
      return 2;
    } catch (const std::exception& e) {
      std::cerr << "disagree " << name << ": " << e.what() << "\n";
      return exit_code_for(e);
    }
  }
  return 1;
}
