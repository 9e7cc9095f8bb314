#include "disagree/trace.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>
#include <zlib.h>

#include "disagree/csv.hpp"
#include "disagree/error.hpp"

namespace disagree {

EnsembleTrace::EnsembleTrace(int epochs, int models, std::vector<int> labels, int num_classes,
                             bool with_logits)
    : epochs_(epochs), models_(models), num_classes_(num_classes), labels_(std::move(labels)) {
  if (epochs < 1 || models < 1 || labels_.empty() || num_classes < 1)
    throw ArgumentError("trace dimensions must be positive");
  for (int y : labels_)
    if (y < 0 || y >= num_classes) throw ArgumentError("trace label out of range");
  const std::size_t cells = static_cast<std::size_t>(epochs) * models * labels_.size();
  predicted_.assign(cells, -1);
  correct_.assign(cells, 0);
  if (with_logits) logits_.assign(cells * num_classes, 0.0);
  epoch_set_.resize(epochs);
  for (int e = 0; e < epochs; ++e) epoch_set_[e] = e;
}

std::span<const double> EnsembleTrace::logits(int epoch, int model, int example) const {
  if (logits_.empty()) throw FidelityError("trace carries no logits");
  return {logits_.data() + cell(epoch, model, example) * num_classes_,
          static_cast<std::size_t>(num_classes_)};
}

void EnsembleTrace::set_prediction(int epoch, int model, int example, int predicted) {
  const auto k = cell(epoch, model, example);
  predicted_[k] = predicted;
  correct_[k] = predicted == labels_[example] ? 1 : 0;
}

void EnsembleTrace::set_logits(int epoch, int model, int example, std::span<const double> logits) {
  if (logits_.empty()) throw FidelityError("trace was created without logits");
  if (static_cast<int>(logits.size()) != num_classes_) throw ArgumentError("logit width mismatch");
  std::copy(logits.begin(), logits.end(),
            logits_.begin() + static_cast<std::ptrdiff_t>(cell(epoch, model, example) * num_classes_));
  const auto best = std::max_element(logits.begin(), logits.end()) - logits.begin();
  set_prediction(epoch, model, example, static_cast<int>(best));
}

void EnsembleTrace::set_epoch_set(std::vector<int> epochs) {
  std::sort(epochs.begin(), epochs.end());
  epochs.erase(std::unique(epochs.begin(), epochs.end()), epochs.end());
  for (int e : epochs)
    if (e < 0 || e >= epochs_) throw ArgumentError("epoch set entry out of range");
  epoch_set_ = std::move(epochs);
}

EnsembleTrace EnsembleTrace::select_models(const std::vector<int>& models) const {
  EnsembleTrace out(epochs_, static_cast<int>(models.size()), labels_, num_classes_, has_logits());
  for (int e = 0; e < epochs_; ++e)
    for (std::size_t j = 0; j < models.size(); ++j)
      for (int m = 0; m < examples(); ++m) {
        const int i = models[j];
        if (has_logits())
          out.set_logits(e, static_cast<int>(j), m, logits(e, i, m));
        else
          out.set_prediction(e, static_cast<int>(j), m, predicted(e, i, m));
      }
  out.epoch_set_ = epoch_set_;
  out.seed_ = seed_;
  return out;
}

EnsembleTrace EnsembleTrace::first_epochs(int count) const {
  if (count < 1 || count > epochs_) throw ArgumentError("epoch count out of range");
  EnsembleTrace out = *this;
  out.epochs_ = count;
  const std::size_t cells = static_cast<std::size_t>(count) * models_ * labels_.size();
  out.predicted_.resize(cells);
  out.correct_.resize(cells);
  if (has_logits()) out.logits_.resize(cells * num_classes_);
  std::vector<int> kept;
  for (int e : epoch_set_)
    if (e < count) kept.push_back(e);
  out.epoch_set_ = std::move(kept);
  return out;
}

// ---------------------------------------------------------------------------
// Binary container

namespace {

constexpr char kMagic[4] = {'D', 'G', 'N', 'T'};
constexpr std::uint16_t kFlagLogits = 1;

class Writer {
 public:
  template <typename T>
  void put(T v) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                    std::conditional_t<sizeof(T) == 2, std::uint16_t,
                                                                       std::uint8_t>>>;
    U bits = std::bit_cast<U>(v);
    for (std::size_t k = 0; k < sizeof(U); ++k) buf_.push_back(static_cast<std::uint8_t>(bits >> (8 * k)));
  }
  /// Append CRC32 of everything written since `from`.
  void put_crc(std::size_t from) {
    put(static_cast<std::uint32_t>(
        crc32(0L, buf_.data() + from, static_cast<uInt>(buf_.size() - from))));
  }
  std::size_t size() const { return buf_.size(); }
  const std::vector<std::uint8_t>& bytes() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::vector<std::uint8_t> data) : buf_(std::move(data)) {}

  template <typename T>
  T get() {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                    std::conditional_t<sizeof(T) == 2, std::uint16_t,
                                                                       std::uint8_t>>>;
    if (pos_ + sizeof(U) > buf_.size())
      throw FormatError("trace file truncated (checksum cannot be verified)");
    U bits = 0;
    for (std::size_t k = 0; k < sizeof(U); ++k) bits |= static_cast<U>(U{buf_[pos_ + k]} << (8 * k));
    pos_ += sizeof(U);
    return std::bit_cast<T>(bits);
  }
  void check_crc(std::size_t from, const char* section) {
    const auto expected = static_cast<std::uint32_t>(
        crc32(0L, buf_.data() + from, static_cast<uInt>(pos_ - from)));
    const auto stored = get<std::uint32_t>();
    if (stored != expected) throw FormatError(std::string("checksum mismatch in ") + section);
  }
  std::size_t pos() const { return pos_; }
  bool at_end() const { return pos_ == buf_.size(); }
  const std::uint8_t* data() const { return buf_.data(); }

 private:
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_trace(const EnsembleTrace& trace, const std::filesystem::path& path) {
  Writer w;
  for (char c : kMagic) w.put(static_cast<std::uint8_t>(c));
  w.put(kTraceFormatVersion);
  w.put(static_cast<std::uint16_t>(trace.has_logits() ? kFlagLogits : 0));
  w.put(static_cast<std::uint32_t>(trace.epochs()));
  w.put(static_cast<std::uint32_t>(trace.models()));
  w.put(static_cast<std::uint32_t>(trace.examples()));
  w.put(static_cast<std::uint32_t>(trace.num_classes()));
  w.put(trace.seed());
  w.put(static_cast<std::uint32_t>(trace.epoch_set().size()));
  for (int e : trace.epoch_set()) w.put(static_cast<std::uint32_t>(e));
  w.put_crc(0);

  auto start = w.size();
  for (int y : trace.labels()) w.put(static_cast<std::int32_t>(y));
  w.put_crc(start);
  start = w.size();
  for (auto p : trace.predicted_data()) w.put(p);
  w.put_crc(start);
  start = w.size();
  for (auto c : trace.correct_data()) w.put(c);
  w.put_crc(start);
  if (trace.has_logits()) {
    start = w.size();
    for (double v : trace.logits_data()) w.put(v);
    w.put_crc(start);
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(w.bytes().data()), static_cast<std::streamsize>(w.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

EnsembleTrace load_trace(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(bytes));

  for (char c : kMagic)
    if (r.get<std::uint8_t>() != static_cast<std::uint8_t>(c)) throw FormatError("bad magic");
  const auto version = r.get<std::uint16_t>();
  if (version != kTraceFormatVersion)
    throw FormatError("unsupported trace version " + std::to_string(version));
  const auto flags = r.get<std::uint16_t>();
  const auto epochs = r.get<std::uint32_t>();
  const auto models = r.get<std::uint32_t>();
  const auto examples = r.get<std::uint32_t>();
  const auto classes = r.get<std::uint32_t>();
  const auto seed = r.get<std::uint64_t>();
  const auto n_set = r.get<std::uint32_t>();
  if (epochs == 0 || models == 0 || examples == 0 || classes == 0 || n_set > epochs)
    throw FormatError("invalid trace header shape");
  std::vector<int> epoch_set;
  for (std::uint32_t k = 0; k < n_set; ++k) epoch_set.push_back(static_cast<int>(r.get<std::uint32_t>()));
  r.check_crc(0, "header");

  auto start = r.pos();
  std::vector<int> labels(examples);
  for (auto& y : labels) y = r.get<std::int32_t>();
  r.check_crc(start, "labels");
  for (int y : labels)
    if (y < 0 || y >= static_cast<int>(classes)) throw FormatError("label out of range");

  const std::size_t cells = std::size_t{epochs} * models * examples;
  start = r.pos();
  std::vector<std::int32_t> predicted(cells);
  for (auto& p : predicted) p = r.get<std::int32_t>();
  r.check_crc(start, "predictions");
  start = r.pos();
  std::vector<std::uint8_t> correct(cells);
  for (auto& c : correct) c = r.get<std::uint8_t>();
  r.check_crc(start, "correctness");
  std::vector<double> logits;
  if (flags & kFlagLogits) {
    start = r.pos();
    logits.resize(cells * classes);
    for (auto& v : logits) v = r.get<double>();
    r.check_crc(start, "logits");
  }
  if (!r.at_end()) throw FormatError("trailing bytes after trace tensors");

  EnsembleTrace trace(static_cast<int>(epochs), static_cast<int>(models), std::move(labels),
                      static_cast<int>(classes), !logits.empty());
  for (std::uint32_t e = 0; e < epochs; ++e)
    for (std::uint32_t i = 0; i < models; ++i)
      for (std::uint32_t m = 0; m < examples; ++m) {
        const auto k = trace.cell(static_cast<int>(e), static_cast<int>(i), static_cast<int>(m));
        if (!logits.empty()) {
          trace.set_logits(static_cast<int>(e), static_cast<int>(i), static_cast<int>(m),
                           std::span<const double>(logits.data() + k * classes, classes));
          if (trace.predicted_data()[k] != predicted[k])
            throw FormatError("stored prediction is not the argmax of stored logits");
        } else {
          if (predicted[k] < 0 || predicted[k] >= static_cast<int>(classes))
            throw FormatError("prediction out of range");
          trace.set_prediction(static_cast<int>(e), static_cast<int>(i), static_cast<int>(m), predicted[k]);
        }
        if (trace.correct_data()[k] != correct[k])
          throw FormatError("stored correctness disagrees with predictions and labels");
      }
  try {
    trace.set_epoch_set(std::move(epoch_set));
  } catch (const ArgumentError& e) {
    throw FormatError(e.what());
  }
  trace.set_seed(seed);
  return trace;
}

// ---------------------------------------------------------------------------
// External ingestion

namespace {

struct Record {
  long epoch, model, example;
  long pred;  // -1 when only logits were given
  std::vector<double> logits;
  long line;
};

std::vector<Record> read_jsonl(std::istream& in) {
  std::vector<Record> out;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(e.what(), line_no);
    }
    Record rec{};
    rec.line = line_no;
    try {
      rec.epoch = j.at("epoch").get<long>();
      rec.model = j.at("model").get<long>();
      rec.example = j.at("example").get<long>();
      rec.pred = j.contains("pred") ? j.at("pred").get<long>() : -1;
      if (j.contains("logits")) rec.logits = j.at("logits").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), line_no);
    }
    if (rec.pred < 0 && rec.logits.empty()) throw ParseError("record has neither pred nor logits", line_no);
    out.push_back(std::move(rec));
  }
  return out;
}

long to_long(const std::string& s, long line_no) {
  try {
    std::size_t used = 0;
    long v = std::stol(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError("expected integer, got '" + s + "'", line_no);
  }
}

std::vector<Record> read_csv(std::istream& in) {
  std::vector<Record> out;
  std::string line;
  long line_no = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto f = csv::split_record(line, line_no);
    if (width == 0) {
      if (f.size() < 4 || f[0] != "epoch" || f[1] != "model" || f[2] != "example" || f[3] != "pred")
        throw ParseError("header must start with epoch,model,example,pred", line_no);
      width = f.size();
      continue;
    }
    if (f.size() != width) throw IngestError("line " + std::to_string(line_no) + ": ragged record");
    Record rec{};
    rec.line = line_no;
    rec.epoch = to_long(f[0], line_no);
    rec.model = to_long(f[1], line_no);
    rec.example = to_long(f[2], line_no);
    rec.pred = f[3].empty() ? -1 : to_long(f[3], line_no);
    for (std::size_t k = 4; k < f.size(); ++k) {
      try {
        rec.logits.push_back(std::stod(f[k]));
      } catch (const std::exception&) {
        throw ParseError("bad logit '" + f[k] + "'", line_no);
      }
    }
    if (rec.pred < 0 && rec.logits.empty()) throw ParseError("record has neither pred nor logits", line_no);
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace

EnsembleTrace ingest_external(const std::filesystem::path& path, IngestFormat format,
                              const std::vector<int>& labels, std::optional<int> num_classes) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open " + path.string());
  const auto records = format == IngestFormat::Jsonl ? read_jsonl(in) : read_csv(in);
  if (records.empty()) throw IngestError("no records");

  long max_e = -1, max_i = -1, max_m = -1;
  std::size_t width = records.front().logits.size();
  int max_label = 0;
  for (const auto& r : records) {
    if (r.epoch < 0 || r.model < 0 || r.example < 0)
      throw IngestError("line " + std::to_string(r.line) + ": negative index");
    if (r.logits.size() != width) throw IngestError("line " + std::to_string(r.line) + ": ragged logits");
    max_e = std::max(max_e, r.epoch);
    max_i = std::max(max_i, r.model);
    max_m = std::max(max_m, r.example);
    max_label = std::max(max_label, static_cast<int>(r.pred));
  }
  if (max_m + 1 > static_cast<long>(labels.size()))
    throw IngestError("example index " + std::to_string(max_m) + " out of range for " +
                      std::to_string(labels.size()) + " labels");
  for (int y : labels) max_label = std::max(max_label, y);
  int classes = num_classes.value_or(width > 0 ? static_cast<int>(width) : max_label + 1);
  if (width > 0 && static_cast<int>(width) != classes)
    throw IngestError("logit width " + std::to_string(width) + " does not match class count");

  EnsembleTrace trace(static_cast<int>(max_e + 1), static_cast<int>(max_i + 1), labels, classes, width > 0);
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(max_e + 1) * (max_i + 1) * labels.size(), 0);
  for (const auto& r : records) {
    const int e = static_cast<int>(r.epoch), i = static_cast<int>(r.model), m = static_cast<int>(r.example);
    const auto k = trace.cell(e, i, m);
    if (seen[k]) {
      std::ostringstream msg;
      msg << "line " << r.line << ": duplicate cell (" << e << ", " << i << ", " << m << ")";
      throw IngestError(msg.str());
    }
    seen[k] = 1;
    if (width > 0) {
      trace.set_logits(e, i, m, r.logits);
      if (r.pred >= 0 && r.pred != trace.predicted(e, i, m))
        throw IngestError("line " + std::to_string(r.line) + ": pred is not the argmax of logits");
    } else {
      if (r.pred >= classes) throw IngestError("line " + std::to_string(r.line) + ": pred out of range");
      trace.set_prediction(e, i, m, static_cast<int>(r.pred));
    }
  }

  std::vector<std::string> gaps;
  std::size_t total_gaps = 0;
  for (int e = 0; e <= max_e; ++e)
    for (int m = 0; m < static_cast<int>(labels.size()); ++m) {
      std::vector<int> missing;
      for (int i = 0; i <= max_i; ++i)
        if (!seen[trace.cell(e, i, m)]) missing.push_back(i);
      if (missing.empty()) continue;
      total_gaps += missing.size();
      auto emit = [&](const std::string& model) {
        if (gaps.size() < 10)
          gaps.push_back("(" + std::to_string(e) + ", " + model + ", " + std::to_string(m) + ")");
      };
      if (static_cast<long>(missing.size()) == max_i + 1 && max_i > 0) {
        emit("*");
      } else {
        for (int i : missing) emit(std::to_string(i));
      }
    }
  if (total_gaps > 0) {
    std::string msg = std::to_string(total_gaps) + " missing cells (epoch, model, example):";
    for (const auto& g : gaps) msg += " " + g;
    throw IngestError(msg);
  }
  return trace;
}

}  // namespace disagree
