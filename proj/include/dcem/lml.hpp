#pragma once

// Temperature-scaled projection onto the interior of the LML polytope
//
//   y*(x) = argmin_{0<y<1}  -x^T y - tau * H_b(y)   s.t.  1^T y = k
//
// where H_b is the binary entropy. Stationarity gives y_i = sigmoid((x_i + nu) / tau)
// for a scalar dual nu, so the forward pass is a bracketed bisection on the
// strictly increasing function nu -> sum_i sigmoid((x_i + nu) / tau) - k. The
// backward pass differentiates the KKT conditions implicitly:
//
//   J = (1/tau) (diag(d) - d d^T / 1^T d),   d_i = y_i (1 - y_i).
//
// Mass goes to the largest scores. Callers minimizing a cost negate it first.

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "dcem/autodiff.hpp"

namespace dcem::lml {

struct Options {
  int max_iterations = 200;
  /// Bisection stops once |1^T y - k| falls below this.
  double tolerance = 1e-12;
  int max_expansions = 64;
  /// A few safeguarded Newton steps on nu after bisection.
  bool newton_polish = false;
};

struct Solution {
  std::vector<double> y;
  /// 1 - y evaluated as sigmoid(-z); stays positive where y rounds to 1.
  std::vector<double> y_complement;
  double nu = 0.0;
  int iterations = 0;
  double residual = 0.0;
};

/// Bisection could not bracket the dual root. Carries the last bracket.
class BracketError : public std::runtime_error {
 public:
  BracketError(const std::string& what, double lo, double hi) : std::runtime_error(what), lo_(lo), hi_(hi) {}
  double lower() const { return lo_; }
  double upper() const { return hi_; }

 private:
  double lo_, hi_;
};

/// Thrown by vjp when every coordinate is saturated (1^T d underflows).
class SaturatedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Throws std::invalid_argument unless 0 < k < n, tau > 0 and x is finite.
void validate(std::span<const double> x, std::size_t k, double tau);

Solution project(std::span<const double> x, std::size_t k, double tau, const Options& opts = {});

/// J^T grad_out for the solution's implicit Jacobian (J is symmetric).
std::vector<double> vjp(const Solution& sol, double tau, std::span<const double> grad_out);

/// Binary entropy H_b(y) = -sum y log y + (1 - y) log(1 - y).
double binary_entropy(std::span<const double> y);

/// Row-wise projection of a B x n score matrix, for registration on a Tape.
ad::CustomPrimitive as_primitive(std::size_t k, double tau, Options opts = {});

/// Convenience: records the row-wise projection of `scores` on its tape.
ad::Var project(const ad::Var& scores, std::size_t k, double tau, const Options& opts = {});

}  // namespace dcem::lml
