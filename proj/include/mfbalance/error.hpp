#pragma once

#include <stdexcept>
#include <string>

namespace mfbalance {

/// Invalid argument or out-of-range parameter.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input with no usable structure (constant series, empty window, zero packets).
class DegenerateInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A structural invariant was violated (rule-set consistency, counter conservation).
class InvariantError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Closed-loop trace calibration did not reach its targets.
class CalibrationError : public std::runtime_error {
 public:
  CalibrationError(const std::string& what, double achieved_H, double achieved_dh)
      : std::runtime_error(what), achieved_H_(achieved_H), achieved_dh_(achieved_dh) {}

  double achieved_H() const noexcept { return achieved_H_; }
  double achieved_dh() const noexcept { return achieved_dh_; }

 private:
  double achieved_H_;
  double achieved_dh_;
};

}  // namespace mfbalance
