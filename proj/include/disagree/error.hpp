#pragma once

#include <stdexcept>
#include <string>

namespace disagree {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad sizes, rates, permutations or other caller-supplied values.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input (CSV, JSONL). Carries the offending line when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, long line = -1)
      : Error(line >= 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  long line() const noexcept { return line_; }

 private:
  long line_;
};

/// Binary trace container problems: magic, version, checksum, shape.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Raised by ingest when records are duplicated, missing or out of range.
class IngestError : public Error {
 public:
  using Error::Error;
};

/// A score needs logits but the trace only carries correctness.
class FidelityError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or exploding weights.
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// The mixture fit has a single mode (or otherwise cannot separate two groups).
class DegenerateFitError : public Error {
 public:
  using Error::Error;
};

}  // namespace disagree
