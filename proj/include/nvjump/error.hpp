#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace nvjump {

// Base for every error raised by the library. `kind()` is stable and used by
// the CLI to map failures onto exit codes.
class Error : public std::runtime_error {
 public:
  enum class Kind { invalid_config, invalid_argument, numeric, insufficient_data, fit_failure, resolution, io };

  Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

struct InvalidConfig : Error {
  explicit InvalidConfig(const std::string& what) : Error(Kind::invalid_config, what) {}
};

struct InvalidArgument : Error {
  explicit InvalidArgument(const std::string& what) : Error(Kind::invalid_argument, what) {}
};

// Quadrature or eigensolver did not reach its tolerance.
struct NumericError : Error {
  NumericError(const std::string& what, double achieved = 0.0)
      : Error(Kind::numeric, what), achieved_tolerance(achieved) {}
  double achieved_tolerance;
};

struct InsufficientData : Error {
  InsufficientData(const std::string& what, std::size_t dark, std::size_t bright)
      : Error(Kind::insufficient_data, what), dark_count(dark), bright_count(bright) {}
  std::size_t dark_count;
  std::size_t bright_count;
};

// Optimizer gave up. Carries the best parameters seen and the objective history.
struct FitFailure : Error {
  FitFailure(const std::string& what, std::vector<double> best = {}, std::vector<double> trace = {})
      : Error(Kind::fit_failure, what), best_so_far(std::move(best)), objective_trace(std::move(trace)) {}
  std::vector<double> best_so_far;
  std::vector<double> objective_trace;
};

struct ResolutionError : Error {
  explicit ResolutionError(const std::string& what) : Error(Kind::resolution, what) {}
};

struct IoError : Error {
  explicit IoError(const std::string& what) : Error(Kind::io, what) {}
};

}  // namespace nvjump
