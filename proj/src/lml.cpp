#include "dcem/lml.hpp"

#include <algorithm>
#include <any>
#include <cmath>
#include <sstream>
#include <string>

namespace dcem::lml {

namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct Dual {
  std::span<const double> x;
  double k;
  double tau;

  // sum_i sigmoid((x_i + nu) / tau) - k
  double residual(double nu) const {
    double s = 0.0;
    for (double xi : x) s += sigmoid((xi + nu) / tau);
    return s - k;
  }

  // d residual / d nu
  double slope(double nu) const {
    double s = 0.0;
    for (double xi : x) {
      const double z = (xi + nu) / tau;
      s += sigmoid(z) * sigmoid(-z);
    }
    return s / tau;
  }
};

}  // namespace

void validate(std::span<const double> x, std::size_t k, double tau) {
  const std::size_t n = x.size();
  if (!(k > 0 && k < n))
    throw std::invalid_argument("lml: elite count k=" + std::to_string(k) + " must satisfy 0 < k < n=" + std::to_string(n));
  if (!(tau > 0.0) || !std::isfinite(tau))
    throw std::invalid_argument("lml: temperature must be positive and finite (tau=0 is the hard top-k path)");
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(x[i])) throw std::invalid_argument("lml: non-finite score at index " + std::to_string(i));
}

Solution project(std::span<const double> x, std::size_t k, double tau, const Options& opts) {
  validate(x, k, tau);
  const std::size_t n = x.size();
  const Dual dual{x, static_cast<double>(k), tau};

  const auto [mn, mx] = std::minmax_element(x.begin(), x.end());
  const double c = 10.0 + std::abs(std::log(static_cast<double>(n - k) / static_cast<double>(k)));
  double lo = -*mx - tau * c;
  double hi = -*mn + tau * c;

  double width = hi - lo;
  int expansions = 0;
  while (dual.residual(lo) > 0.0) {
    if (++expansions > opts.max_expansions) break;
    lo -= width;
    width *= 2.0;
  }
  while (dual.residual(hi) < 0.0) {
    if (++expansions > opts.max_expansions) break;
    hi += width;
    width *= 2.0;
  }
  if (!(dual.residual(lo) <= 0.0 && dual.residual(hi) >= 0.0)) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "lml: failed to bracket the dual root, last bracket [" << lo << ", " << hi << "]";
    throw BracketError(msg.str(), lo, hi);
  }

  double best_nu = lo;
  double best_abs = std::abs(dual.residual(lo));
  if (const double rh = std::abs(dual.residual(hi)); rh < best_abs) {
    best_abs = rh;
    best_nu = hi;
  }
  int it = 0;
  while (it < opts.max_iterations && best_abs > opts.tolerance) {
    ++it;
    const double mid = lo + 0.5 * (hi - lo);
    if (mid <= lo || mid >= hi) break;  // bracket exhausted at double resolution
    const double r = dual.residual(mid);
    if (std::abs(r) < best_abs) {
      best_abs = std::abs(r);
      best_nu = mid;
    }
    if (r < 0.0)
      lo = mid;
    else
      hi = mid;
  }

  if (opts.newton_polish) {
    for (int step = 0; step < 4 && best_abs > 0.0; ++step) {
      const double slope = dual.slope(best_nu);
      if (!(slope > 0.0)) break;
      const double cand = std::clamp(best_nu - dual.residual(best_nu) / slope, lo, hi);
      const double r = std::abs(dual.residual(cand));
      if (!(r < best_abs)) break;
      best_abs = r;
      best_nu = cand;
    }
  }

  Solution sol;
  sol.nu = best_nu;
  sol.iterations = it;
  sol.y.resize(n);
  sol.y_complement.resize(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double z = (x[i] + best_nu) / tau;
    sol.y[i] = sigmoid(z);
    sol.y_complement[i] = sigmoid(-z);
    total += sol.y[i];
  }
  sol.residual = std::abs(total - static_cast<double>(k));
  return sol;
}

std::vector<double> vjp(const Solution& sol, double tau, std::span<const double> grad_out) {
  const std::size_t n = sol.y.size();
  if (grad_out.size() != n)
    throw ShapeError("lml vjp: gradient of length " + std::to_string(grad_out.size()) + " for projection of length " +
                     std::to_string(n));
  std::vector<double> d(n);
  double d_sum = 0.0, d_dot_g = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    d[i] = sol.y[i] * sol.y_complement[i];
    d_sum += d[i];
    d_dot_g += d[i] * grad_out[i];
  }
  if (d_sum < 1e-300) throw SaturatedError("projection saturated; decrease |x|/tau");
  std::vector<double> out(n);
  const double shift = d_dot_g / d_sum;
  for (std::size_t i = 0; i < n; ++i) out[i] = d[i] * (grad_out[i] - shift) / tau;
  return out;
}

double binary_entropy(std::span<const double> y) {
  double h = 0.0;
  for (double p : y) {
    if (p > 0.0) h -= p * std::log(p);
    if (p < 1.0) h -= (1.0 - p) * std::log1p(-p);
  }
  return h;
}

ad::CustomPrimitive as_primitive(std::size_t k, double tau, Options opts) {
  ad::CustomPrimitive prim;
  prim.name = "lml";
  prim.forward = [k, tau, opts](std::span<const Tensor* const> in, std::any& ctx) {
    const Tensor& x = *in[0];
    std::vector<Solution> sols;
    sols.reserve(x.rows());
    Tensor out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
      sols.push_back(project(x.row_span(r), k, tau, opts));
      std::copy(sols.back().y.begin(), sols.back().y.end(), out.row_span(r).begin());
    }
    ctx = std::move(sols);
    return out;
  };
  prim.backward = [tau](const std::any& ctx, std::span<const Tensor* const> in, const Tensor&, const Tensor& g) {
    const auto& sols = std::any_cast<const std::vector<Solution>&>(ctx);
    const Tensor& x = *in[0];
    Tensor gx(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const std::vector<double> row = vjp(sols[r], tau, g.row_span(r));
      std::copy(row.begin(), row.end(), gx.row_span(r).begin());
    }
    return std::vector<Tensor>{std::move(gx)};
  };
  return prim;
}

ad::Var project(const ad::Var& scores, std::size_t k, double tau, const Options& opts) {
  return scores.tape().apply(as_primitive(k, tau, opts), {scores});
}

}  // namespace dcem::lml
