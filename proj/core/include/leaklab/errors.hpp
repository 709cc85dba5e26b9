#pragma once

#include <stdexcept>
#include <string>

namespace leaklab {

// Invalid values, ranges, or preconditions on public operations.
class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed external input (manifests, plan files, configs).
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Cross-references that do not resolve (e.g. a split plan naming frames
// that the dataset does not contain).
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss.
class TrainingDivergedError : public std::runtime_error {
 public:
  TrainingDivergedError(const std::string& what, long iteration)
      : std::runtime_error(what), iteration_(iteration) {}
  long iteration() const { return iteration_; }

 private:
  long iteration_;
};

// A persisted feature cache belongs to a different extractor.
class StaleCacheError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace leaklab
