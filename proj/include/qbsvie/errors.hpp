#ifndef QBSVIE_ERRORS_HPP
#define QBSVIE_ERRORS_HPP

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace qbsvie {

/// Input rejected before any computation.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Requested structure exceeds a configured cap (path-tree depth, refinement).
class SizeError : public std::length_error {
 public:
  using std::length_error::length_error;
};

/// A fixed-point loop failed to converge. `where` names the location
/// (node, step, outer index) and `history` the successive differences.
class SolverFailure : public std::runtime_error {
 public:
  SolverFailure(const std::string& what, std::string where, std::vector<double> history = {})
      : std::runtime_error(what + " [" + where + "]"), where_(std::move(where)), history_(std::move(history)) {}

  const std::string& where() const noexcept { return where_; }
  const std::vector<double>& history() const noexcept { return history_; }

 private:
  std::string where_;
  std::vector<double> history_;
};

}  // namespace qbsvie

#endif  // QBSVIE_ERRORS_HPP
