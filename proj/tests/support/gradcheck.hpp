#pragma once

// Central finite-difference oracle for the test suites. It only evaluates the
// forward function on perturbed copies of the inputs, so it shares no code
// path with the analytic backward rules it is compared against.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "dcem/autodiff.hpp"

namespace dcem::testing {

using ScalarFn = std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>;

inline double eval_scalar(const ScalarFn& f, const std::vector<Tensor>& inputs) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (const Tensor& t : inputs) vars.push_back(tape.constant(t));
  return f(tape, vars).item();
}

/// d f / d inputs[i] by central differences with step h.
inline std::vector<Tensor> numeric_grad(const ScalarFn& f, const std::vector<Tensor>& inputs, double h = 1e-5) {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor g(inputs[i].rows(), inputs[i].cols());
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      std::vector<Tensor> plus = inputs, minus = inputs;
      plus[i][j] += h;
      minus[i][j] -= h;
      g[j] = (eval_scalar(f, plus) - eval_scalar(f, minus)) / (2.0 * h);
    }
    out.push_back(std::move(g));
  }
  return out;
}

inline std::vector<Tensor> analytic_grad(const ScalarFn& f, const std::vector<Tensor>& inputs) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (const Tensor& t : inputs) vars.push_back(tape.variable(t));
  ad::Var root = f(tape, vars);
  tape.backward(root);
  std::vector<Tensor> out;
  for (const auto& v : vars) out.push_back(v.grad());
  return out;
}

/// ||a - b||_2 / max(||a||_2, ||b||_2, floor)
inline double rel_err(const Tensor& a, const Tensor& b, double floor = 1e-12) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

inline double rel_err(const std::vector<Tensor>& a, const std::vector<Tensor>& b, double floor = 1e-12) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t)
    for (std::size_t i = 0; i < a[t].size(); ++i) {
      diff += (a[t][i] - b[t][i]) * (a[t][i] - b[t][i]);
      na += a[t][i] * a[t][i];
      nb += b[t][i] * b[t][i];
    }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

inline double gradcheck(const ScalarFn& f, const std::vector<Tensor>& inputs, double h = 1e-5) {
  return rel_err(analytic_grad(f, inputs), numeric_grad(f, inputs, h));
}

inline Tensor random_tensor(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(rows, cols);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

}  // namespace dcem::testing
