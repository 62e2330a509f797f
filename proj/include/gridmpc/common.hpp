#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace gridmpc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// System base frequency; the bundled cases are 60 Hz networks.
inline constexpr double kBaseFrequencyHz = 60.0;
inline constexpr double kOmegaSync = 2.0 * 3.14159265358979323846 * kBaseFrequencyHz;

/// Interface contract violated by the caller: mismatched dimensions, unknown ids.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Numeric-domain violation: non-positive voltage, zero variance, out-of-range guard.
class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Newton failed to converge while simulating. Reported as voltage instability
/// at a given simulation time, never as a crash.
class CollapseError : public std::runtime_error {
 public:
  CollapseError(const std::string& msg, double t)
      : std::runtime_error(msg + " (t = " + std::to_string(t) + " s)"), time(t) {}
  double time;
};

/// Power flow did not converge for the given case.
class DivergedCaseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Structured-text input could not be parsed; carries the offending line number.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& file, int line_no, const std::string& what)
      : std::runtime_error(file + ":" + std::to_string(line_no) + ": " + what),
        line(line_no) {}
  int line;
};

/// File could not be read/written, or has a wrong version header.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace gridmpc
