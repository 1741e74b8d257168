#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fdwave {

/// Raised for malformed or out-of-range arguments.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A phase-error tolerance cannot be met anywhere in the search bracket.
class UnreachableTolerance : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The time step exceeds the stability bound and no override was given.
class CflViolation : public std::runtime_error {
 public:
  CflViolation(double dt, double dt_max)
      : std::runtime_error("dt = " + std::to_string(dt) +
                           " s exceeds the stable limit 0.9 * cfl_max_dt = " +
                           std::to_string(dt_max) +
                           " s (set allow_unstable to override)"),
        dt_(dt),
        dt_max_(dt_max) {}

  double dt() const noexcept { return dt_; }
  double dt_max() const noexcept { return dt_max_; }

 private:
  double dt_;
  double dt_max_;
};

/// The wavefield became non-finite.
class Diverged : public std::runtime_error {
 public:
  explicit Diverged(std::size_t step)
      : std::runtime_error("wavefield diverged (non-finite value) at step " +
                           std::to_string(step)),
        step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class PartitionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Workers disagree about the step being exchanged.
class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed file contents; carries the byte offset where parsing failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) +
                           ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Configuration file problems (missing or unknown keys, bad values).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fdwave
