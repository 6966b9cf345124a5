#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace unig {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A precondition on an argument (shape, range, label) was violated.
class InputDomainError : public Error {
 public:
  using Error::Error;
};

// Malformed model or IDX file. `offset` is the byte position where parsing
// stopped.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

class TrainingFailure : public Error {
 public:
  TrainingFailure(double achieved, double target)
      : Error("training reached held-out accuracy " + std::to_string(achieved) +
              " below target " + std::to_string(target)),
        achieved_(achieved) {}

  double achieved_accuracy() const { return achieved_; }

 private:
  double achieved_;
};

}  // namespace unig
