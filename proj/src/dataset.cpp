#include "disagree/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "disagree/csv.hpp"
#include "disagree/error.hpp"
#include "disagree/rng.hpp"

namespace disagree {

namespace {

std::vector<std::string> default_names(int num_classes) {
  std::vector<std::string> names;
  for (int c = 0; c < num_classes; ++c) names.push_back(std::to_string(c));
  return names;
}

bool parse_int(const std::string& s, long long& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

}  // namespace

void LabeledDataset::validate() const {
  const auto m = static_cast<Eigen::Index>(given_labels.size());
  if (features.rows() != m) throw ArgumentError("feature rows do not match label count");
  if (num_classes < 1) throw ArgumentError("num_classes must be positive");
  auto in_range = [&](const Labels& l) {
    return std::all_of(l.begin(), l.end(), [&](int y) { return y >= 0 && y < num_classes; });
  };
  if (!in_range(given_labels)) throw ArgumentError("given label out of range");
  if (clean_labels) {
    if (clean_labels->size() != given_labels.size()) throw ArgumentError("clean label count mismatch");
    if (!in_range(*clean_labels)) throw ArgumentError("clean label out of range");
  }
  if (corruption_mask) {
    if (!clean_labels) throw ArgumentError("corruption mask without clean labels");
    if (corruption_mask->size() != given_labels.size()) throw ArgumentError("mask size mismatch");
    for (std::size_t i = 0; i < given_labels.size(); ++i) {
      if (((*corruption_mask)[i] != 0) != (given_labels[i] != (*clean_labels)[i]))
        throw ArgumentError("corruption mask disagrees with labels at example " + std::to_string(i));
    }
  }
  if (!class_names.empty() && static_cast<int>(class_names.size()) != num_classes)
    throw ArgumentError("class name count does not match num_classes");
}

LabeledDataset LabeledDataset::subset(const std::vector<int>& ids) const {
  LabeledDataset out;
  out.num_classes = num_classes;
  out.class_names = class_names;
  out.features.resize(static_cast<Eigen::Index>(ids.size()), features.cols());
  out.given_labels.reserve(ids.size());
  if (clean_labels) out.clean_labels.emplace();
  if (corruption_mask) out.corruption_mask.emplace();
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const int id = ids[r];
    if (id < 0 || id >= size()) throw ArgumentError("subset id out of range");
    out.features.row(static_cast<Eigen::Index>(r)) = features.row(id);
    out.given_labels.push_back(given_labels[id]);
    if (clean_labels) out.clean_labels->push_back((*clean_labels)[id]);
    if (corruption_mask) out.corruption_mask->push_back((*corruption_mask)[id]);
  }
  return out;
}

LabeledDataset make_blobs(int num_classes, int per_class, int dim, double separation,
                          std::uint64_t seed) {
  if (num_classes < 2) throw ArgumentError("make_blobs: num_classes must be >= 2");
  if (per_class < 1) throw ArgumentError("make_blobs: per_class must be >= 1");
  if (dim < 1) throw ArgumentError("make_blobs: dim must be >= 1");
  if (!(separation > 0.0)) throw ArgumentError("make_blobs: separation must be > 0");

  // Means on a regular polygon in the first two coordinates, chord = separation.
  // In one dimension they sit on a line with spacing = separation.
  Eigen::MatrixXd means = Eigen::MatrixXd::Zero(num_classes, dim);
  if (dim == 1) {
    for (int c = 0; c < num_classes; ++c) means(c, 0) = separation * c;
  } else {
    const double radius = separation / (2.0 * std::sin(M_PI / num_classes));
    for (int c = 0; c < num_classes; ++c) {
      const double angle = 2.0 * M_PI * c / num_classes;
      means(c, 0) = radius * std::cos(angle);
      means(c, 1) = radius * std::sin(angle);
    }
  }

  LabeledDataset ds;
  ds.num_classes = num_classes;
  ds.class_names = default_names(num_classes);
  const int m = num_classes * per_class;
  ds.features.resize(m, dim);
  ds.given_labels.resize(m);
  Rng rng(derive_seed(seed, "blobs"));
  for (int c = 0, row = 0; c < num_classes; ++c) {
    for (int k = 0; k < per_class; ++k, ++row) {
      for (int j = 0; j < dim; ++j) ds.features(row, j) = means(c, j) + rng.normal();
      ds.given_labels[row] = c;
    }
  }
  ds.clean_labels = ds.given_labels;
  ds.corruption_mask = Mask(m, 0);
  return ds;
}

std::vector<int> cyclic_permutation(int num_classes) {
  std::vector<int> p(num_classes);
  for (int c = 0; c < num_classes; ++c) p[c] = (c + 1) % num_classes;
  return p;
}

int corrupted_count(double rate, int num_examples) {
  return static_cast<int>(std::lround(rate * num_examples));
}

LabeledDataset inject_noise(const LabeledDataset& ds, const NoiseSpec& spec) {
  if (!(spec.rate >= 0.0 && spec.rate <= 1.0)) throw ArgumentError("noise rate must be in [0,1]");
  const int c = ds.num_classes;
  if (c < 2) throw ArgumentError("noise injection needs at least two classes");
  if (ds.clean_labels && *ds.clean_labels != ds.given_labels)
    throw ArgumentError("noise injection expects given labels equal to clean labels");

  std::vector<int> perm;
  if (spec.kind == NoiseKind::AsymmetricPermutation) {
    perm = spec.permutation.empty() ? cyclic_permutation(c) : spec.permutation;
    if (static_cast<int>(perm.size()) != c) throw ArgumentError("permutation size must equal num_classes");
    std::vector<int> seen(c, 0);
    for (int k = 0; k < c; ++k) {
      if (perm[k] < 0 || perm[k] >= c) throw ArgumentError("permutation entry out of range");
      if (perm[k] == k) throw ArgumentError("permutation has fixed point " + std::to_string(k));
      if (seen[perm[k]]++) throw ArgumentError("permutation is not a bijection");
    }
  }

  LabeledDataset out = ds;
  const int m = ds.size();
  out.clean_labels = ds.given_labels;
  out.corruption_mask = Mask(m, 0);

  const int count = corrupted_count(spec.rate, m);
  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);
  Rng pick(derive_seed(spec.seed, "noise-subset"));
  // Partial Fisher-Yates: the first `count` slots are a uniform subset.
  for (int i = 0; i < count; ++i) {
    const int j = i + static_cast<int>(pick.below(static_cast<std::uint64_t>(m - i)));
    std::swap(order[i], order[j]);
  }
  std::vector<int> chosen(order.begin(), order.begin() + count);
  std::sort(chosen.begin(), chosen.end());

  Rng relabel(derive_seed(spec.seed, "noise-label"));
  for (int id : chosen) {
    const int clean = ds.given_labels[id];
    int noisy;
    if (spec.kind == NoiseKind::Symmetric) {
      noisy = (clean + 1 + static_cast<int>(relabel.below(static_cast<std::uint64_t>(c - 1)))) % c;
    } else {
      noisy = perm[clean];
    }
    out.given_labels[id] = noisy;
    (*out.corruption_mask)[id] = 1;
  }
  return out;
}

LabeledDataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::string line;
  long line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      header = csv::split_record(line, line_no);
      break;
    }
  }
  if (header.empty()) throw ParseError("no examples");

  int label_col = -1, clean_col = -1, corrupted_col = -1;
  std::vector<int> feature_cols;
  for (int k = 0; k < static_cast<int>(header.size()); ++k) {
    const std::string name = trim(header[k]);
    if (name == "label" || name == "given_label") {
      if (label_col >= 0) throw ParseError("duplicate label column", line_no);
      label_col = k;
    } else if (name == "clean_label") {
      clean_col = k;
    } else if (name == "corrupted") {
      corrupted_col = k;
    } else {
      feature_cols.push_back(k);
    }
  }
  if (label_col < 0) throw ParseError("header has no label column", line_no);

  std::vector<std::vector<double>> rows;
  std::vector<std::string> given, clean;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = csv::split_record(line, line_no);
    if (fields.size() != header.size())
      throw ParseError("expected " + std::to_string(header.size()) + " fields, got " +
                           std::to_string(fields.size()),
                       line_no);
    std::vector<double> row;
    row.reserve(feature_cols.size());
    for (int k : feature_cols) {
      double v;
      if (!parse_double(trim(fields[k]), v))
        throw ParseError("non-numeric feature '" + fields[k] + "' in column " + header[k], line_no);
      row.push_back(v);
    }
    rows.push_back(std::move(row));
    std::string g = trim(fields[label_col]);
    if (g.empty()) throw ParseError("empty label", line_no);
    given.push_back(std::move(g));
    if (clean_col >= 0) {
      std::string cl = trim(fields[clean_col]);
      if (cl.empty()) throw ParseError("empty clean label", line_no);
      clean.push_back(std::move(cl));
    }
  }
  if (rows.empty()) throw ParseError("no examples");
  (void)corrupted_col;

  // Dense ids follow sorted class names; integer names sort numerically.
  std::set<std::string> names(given.begin(), given.end());
  names.insert(clean.begin(), clean.end());
  std::vector<std::string> sorted(names.begin(), names.end());
  const bool all_int = std::all_of(sorted.begin(), sorted.end(), [](const std::string& s) {
    long long v;
    return parse_int(s, v);
  });
  if (all_int) {
    std::sort(sorted.begin(), sorted.end(), [](const std::string& a, const std::string& b) {
      long long x = 0, y = 0;
      parse_int(a, x);
      parse_int(b, y);
      return x < y;
    });
  }
  std::map<std::string, int> index;
  for (int k = 0; k < static_cast<int>(sorted.size()); ++k) index[sorted[k]] = k;

  LabeledDataset ds;
  ds.num_classes = static_cast<int>(sorted.size());
  ds.class_names = sorted;
  ds.features.resize(static_cast<Eigen::Index>(rows.size()),
                     static_cast<Eigen::Index>(feature_cols.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t j = 0; j < feature_cols.size(); ++j)
      ds.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = rows[r][j];
  for (const auto& g : given) ds.given_labels.push_back(index.at(g));
  if (clean_col >= 0) {
    ds.clean_labels.emplace();
    ds.corruption_mask.emplace();
    for (std::size_t r = 0; r < clean.size(); ++r) {
      const int cl = index.at(clean[r]);
      ds.clean_labels->push_back(cl);
      ds.corruption_mask->push_back(cl != ds.given_labels[r] ? 1 : 0);
    }
  }
  ds.validate();
  return ds;
}

void save_csv(const LabeledDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArgumentError("cannot write " + path.string());
  const auto names = ds.class_names.empty() ? default_names(ds.num_classes) : ds.class_names;
  std::vector<std::string> header;
  for (int j = 0; j < ds.dim(); ++j) header.push_back("x" + std::to_string(j));
  header.push_back("given_label");
  if (ds.clean_labels) {
    header.push_back("clean_label");
    header.push_back("corrupted");
  }
  csv::write_record(out, header);
  for (int i = 0; i < ds.size(); ++i) {
    std::vector<std::string> row;
    for (int j = 0; j < ds.dim(); ++j) row.push_back(csv::format_double(ds.features(i, j)));
    row.push_back(names[ds.given_labels[i]]);
    if (ds.clean_labels) {
      row.push_back(names[(*ds.clean_labels)[i]]);
      row.push_back(ds.given_labels[i] != (*ds.clean_labels)[i] ? "1" : "0");
    }
    csv::write_record(out, row);
  }
}

std::pair<LabeledDataset, LabeledDataset> stratified_split(const LabeledDataset& ds,
                                                           double test_fraction,
                                                           std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ArgumentError("test fraction must be in (0,1)");
  // Stratify on the clean label when known so that the test split stays clean-balanced.
  const Labels& strat = ds.clean_labels ? *ds.clean_labels : ds.given_labels;
  std::vector<std::vector<int>> by_class(ds.num_classes);
  for (int i = 0; i < ds.size(); ++i) by_class[strat[i]].push_back(i);
  Rng rng(derive_seed(seed, "split"));
  std::vector<int> train, test;
  for (auto& ids : by_class) {
    rng.shuffle(std::span<int>(ids));
    const auto n_test = static_cast<std::size_t>(std::lround(test_fraction * ids.size()));
    test.insert(test.end(), ids.begin(), ids.begin() + n_test);
    train.insert(train.end(), ids.begin() + n_test, ids.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {ds.subset(train), ds.subset(test)};
}

}  // namespace disagree
