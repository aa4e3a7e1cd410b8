#ifndef TRAJCLUST_ERRORS_HPP
#define TRAJCLUST_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace trajclust {

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidConfig : Error {
  using Error::Error;
};

/// A shared-grid time point has too few observations or zero variance.
struct DegenerateColumn : Error {
  using Error::Error;
};

struct ParseError : Error {
  ParseError(const std::string& msg, std::size_t line)
      : Error(msg + " (line " + std::to_string(line) + ")"), line_number(line) {}
  std::size_t line_number;
};

struct NonMonotoneTimes : Error {
  explicit NonMonotoneTimes(const std::string& subject_id)
      : Error("times not strictly increasing for subject '" + subject_id + "'"),
        subject(subject_id) {}
  std::string subject;
};

/// Cholesky failed even after jitter escalation.
struct NotPositiveDefinite : Error {
  using Error::Error;
};

struct InvalidState : Error {
  using Error::Error;
};

struct NumericalFailure : Error {
  using Error::Error;
};

/// An EM run collapsed: some class lost essentially all posterior mass.
struct DegenerateFit : Error {
  using Error::Error;
};

struct ZeroVariance : Error {
  using Error::Error;
};

struct NotEnoughSubjects : Error {
  using Error::Error;
};

struct FailureRateExceeded : Error {
  using Error::Error;
};

}  // namespace trajclust

#endif
