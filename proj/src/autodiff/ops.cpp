#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <utility>

#include "dcem/autodiff.hpp"
#include "dcem/simd/kernels.hpp"

namespace dcem::ad {

namespace {

using Grads = std::vector<Var>;

template <class F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.rows(), a.cols());
  const double* in = a.data();
  double* o = out.data();
  for (std::size_t i = 0; i < a.size(); ++i) o[i] = f(in[i]);
  return out;
}

Tensor apply_kernel(const Tensor& a, void (*kernel)(std::size_t, const double*, double*)) {
  Tensor out(a.rows(), a.cols());
  kernel(a.size(), a.data(), out.data());
  return out;
}

// Expands a 1 x 1 operand to the other operand's shape.
std::pair<Var, Var> broadcast_pair(const Var& a, const Var& b, const char* op) {
  const Tensor& va = a.value();
  const Tensor& vb = b.value();
  if (va.same_shape(vb)) return {a, b};
  if (va.is_scalar()) return {expand(a, vb.rows(), vb.cols()), b};
  if (vb.is_scalar()) return {a, expand(b, va.rows(), va.cols())};
  throw ShapeError(std::string(op) + ": shape mismatch " + va.shape_str() + " vs " + vb.shape_str());
}

std::vector<std::size_t> iota_range(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  return idx;
}

}  // namespace

// ---- arithmetic -----------------------------------------------------------

Var add(const Var& a, const Var& b) {
  auto [x, y] = broadcast_pair(a, b, "add");
  Tensor v = x.value() + y.value();
  return x.tape().record("add", {x, y}, std::move(v),
                         [](const Var& g, const Var&, std::span<const bool>) { return Grads{g, g}; });
}

Var sub(const Var& a, const Var& b) {
  auto [x, y] = broadcast_pair(a, b, "sub");
  Tensor v = x.value() - y.value();
  return x.tape().record("sub", {x, y}, std::move(v),
                         [](const Var& g, const Var&, std::span<const bool> needs) {
                           Grads out(2);
                           if (needs[0]) out[0] = g;
                           if (needs[1]) out[1] = neg(g);
                           return out;
                         });
}

Var mul(const Var& a, const Var& b) {
  auto [x, y] = broadcast_pair(a, b, "mul");
  Tensor v = hadamard(x.value(), y.value());
  return x.tape().record("mul", {x, y}, std::move(v), [x, y](const Var& g, const Var&, std::span<const bool> needs) {
    Grads out(2);
    if (needs[0]) out[0] = mul(g, y);
    if (needs[1]) out[1] = mul(g, x);
    return out;
  });
}

Var div(const Var& a, const Var& b) {
  auto [x, y] = broadcast_pair(a, b, "div");
  const Tensor& vx = x.value();
  const Tensor& vy = y.value();
  Tensor v(vx.rows(), vx.cols());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = vx[i] / vy[i];
  return x.tape().record("div", {x, y}, std::move(v), [y](const Var& g, const Var& self, std::span<const bool> needs) {
    Grads out(2);
    if (needs[0]) out[0] = div(g, y);
    if (needs[1]) out[1] = neg(mul(g, div(self, y)));
    return out;
  });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double s) {
  Tensor v = s * a.value();
  return a.tape().record("scale", {a}, std::move(v),
                         [s](const Var& g, const Var&, std::span<const bool>) { return Grads{scale(g, s)}; });
}

Var add_scalar(const Var& a, double s) {
  const Tensor& va = a.value();
  Tensor v(va.rows(), va.cols());
  simd::kernels().affine(va.size(), 1.0, s, va.data(), v.data());
  return a.tape().record("add_scalar", {a}, std::move(v),
                         [](const Var& g, const Var&, std::span<const bool>) { return Grads{g}; });
}

Var operator+(const Var& a, const Var& b) { return add(a, b); }
Var operator-(const Var& a, const Var& b) { return sub(a, b); }
Var operator*(const Var& a, const Var& b) { return mul(a, b); }
Var operator/(const Var& a, const Var& b) { return div(a, b); }
Var operator-(const Var& a) { return neg(a); }
Var operator+(const Var& a, double s) { return add_scalar(a, s); }
Var operator+(double s, const Var& a) { return add_scalar(a, s); }
Var operator-(const Var& a, double s) { return add_scalar(a, -s); }
Var operator-(double s, const Var& a) { return add_scalar(neg(a), s); }
Var operator*(const Var& a, double s) { return scale(a, s); }
Var operator*(double s, const Var& a) { return scale(a, s); }
Var operator/(const Var& a, double s) { return scale(a, 1.0 / s); }
Var operator/(double s, const Var& a) { return div(a.tape().constant(Tensor::scalar(s)), a); }

// ---- linear algebra -------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  Tensor v = dcem::matmul(a.value(), b.value());
  return a.tape().record("matmul", {a, b}, std::move(v), [a, b](const Var& g, const Var&, std::span<const bool> needs) {
    Grads out(2);
    if (needs[0]) out[0] = matmul(g, transpose(b));
    if (needs[1]) out[1] = matmul(transpose(a), g);
    return out;
  });
}

Var transpose(const Var& a) {
  return a.tape().record("transpose", {a}, a.value().transposed(),
                         [](const Var& g, const Var&, std::span<const bool>) { return Grads{transpose(g)}; });
}

// ---- reductions -----------------------------------------------------------

Var sum(const Var& a) {
  const std::size_t r = a.rows(), c = a.cols();
  return a.tape().record("sum", {a}, Tensor::scalar(dcem::sum(a.value())),
                         [r, c](const Var& g, const Var&, std::span<const bool>) { return Grads{expand(g, r, c)}; });
}

Var mean(const Var& a) {
  if (a.value().size() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var row_sum(const Var& a) {
  const Tensor& va = a.value();
  Tensor v(va.rows(), 1);
  for (std::size_t r = 0; r < va.rows(); ++r) v[r] = simd::kernels().sum(va.cols(), va.data() + r * va.cols());
  const std::size_t c = va.cols();
  return a.tape().record("row_sum", {a}, std::move(v),
                         [c](const Var& g, const Var&, std::span<const bool>) { return Grads{broadcast_cols(g, c)}; });
}

Var col_sum(const Var& a) {
  const Tensor& va = a.value();
  Tensor v(1, va.cols());
  for (std::size_t r = 0; r < va.rows(); ++r) simd::kernels().axpy(va.cols(), 1.0, va.data() + r * va.cols(), v.data());
  const std::size_t rows = va.rows();
  return a.tape().record("col_sum", {a}, std::move(v),
                         [rows](const Var& g, const Var&, std::span<const bool>) { return Grads{broadcast_rows(g, rows)}; });
}

// ---- elementwise ----------------------------------------------------------

Var square(const Var& a) {
  Tensor v = hadamard(a.value(), a.value());
  return a.tape().record("square", {a}, std::move(v),
                         [a](const Var& g, const Var&, std::span<const bool>) { return Grads{mul(g, scale(a, 2.0))}; });
}

Var sqrt(const Var& a) {
  Tensor v = map(a.value(), [](double x) { return std::sqrt(x); });
  return a.tape().record("sqrt", {a}, std::move(v), [](const Var& g, const Var& self, std::span<const bool>) {
    // d sqrt(x) = 1 / (2 sqrt(x)); taken as 0 where sqrt(x) == 0
    Tape& tape = self.tape();
    const Tensor& y = self.value();
    Tensor half(y.rows(), y.cols()), pad(y.rows(), y.cols());
    for (std::size_t i = 0; i < y.size(); ++i) {
      const bool zero = y[i] == 0.0;
      half[i] = zero ? 0.0 : 0.5;
      pad[i] = zero ? 1.0 : 0.0;
    }
    return Grads{mul(g, div(tape.constant(std::move(half)), add(self, tape.constant(std::move(pad)))))};
  });
}

Var exp(const Var& a) {
  Tensor v = apply_kernel(a.value(), simd::kernels().exp);
  return a.tape().record("exp", {a}, std::move(v),
                         [](const Var& g, const Var& self, std::span<const bool>) { return Grads{mul(g, self)}; });
}

Var log(const Var& a) {
  Tensor v = map(a.value(), [](double x) { return std::log(x); });
  return a.tape().record("log", {a}, std::move(v),
                         [a](const Var& g, const Var&, std::span<const bool>) { return Grads{div(g, a)}; });
}

Var tanh(const Var& a) {
  Tensor v = map(a.value(), [](double x) { return std::tanh(x); });
  return a.tape().record("tanh", {a}, std::move(v), [](const Var& g, const Var& self, std::span<const bool>) {
    return Grads{mul(g, 1.0 - square(self))};
  });
}

Var sigmoid(const Var& a) {
  Tensor v = apply_kernel(a.value(), simd::kernels().sigmoid);
  return a.tape().record("sigmoid", {a}, std::move(v), [](const Var& g, const Var& self, std::span<const bool>) {
    return Grads{mul(g, mul(self, 1.0 - self))};
  });
}

Var softplus(const Var& a) {
  Tensor v = apply_kernel(a.value(), simd::kernels().softplus);
  return a.tape().record("softplus", {a}, std::move(v),
                         [a](const Var& g, const Var&, std::span<const bool>) { return Grads{mul(g, sigmoid(a))}; });
}

Var elu(const Var& a) {
  Tensor v = map(a.value(), [](double x) { return x > 0.0 ? x : std::expm1(x); });
  return a.tape().record("elu", {a}, std::move(v), [a](const Var& g, const Var& self, std::span<const bool>) {
    Tape& tape = self.tape();
    const Tensor& x = a.value();
    Tensor pos(x.rows(), x.cols()), negative(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) {
      pos[i] = x[i] > 0.0 ? 1.0 : 0.0;
      negative[i] = 1.0 - pos[i];
    }
    // derivative: 1 on the positive side, exp(x) = elu(x) + 1 on the negative side
    Var slope = add(tape.constant(std::move(pos)), mul(tape.constant(std::move(negative)), self + 1.0));
    return Grads{mul(g, slope)};
  });
}

Var sin(const Var& a) {
  Tensor v = map(a.value(), [](double x) { return std::sin(x); });
  return a.tape().record("sin", {a}, std::move(v),
                         [a](const Var& g, const Var&, std::span<const bool>) { return Grads{mul(g, cos(a))}; });
}

Var cos(const Var& a) {
  Tensor v = map(a.value(), [](double x) { return std::cos(x); });
  return a.tape().record("cos", {a}, std::move(v),
                         [a](const Var& g, const Var&, std::span<const bool>) { return Grads{neg(mul(g, sin(a)))}; });
}

Var clamp(const Var& a, double lo, double hi) {
  if (lo > hi) throw std::invalid_argument("clamp: lower bound above upper bound");
  const Tensor& x = a.value();
  Tensor v(x.rows(), x.cols());
  auto mask = std::make_shared<Tensor>(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    v[i] = std::clamp(x[i], lo, hi);
    (*mask)[i] = (x[i] >= lo && x[i] <= hi) ? 1.0 : 0.0;
  }
  return a.tape().record("clamp", {a}, std::move(v), [mask](const Var& g, const Var& self, std::span<const bool>) {
    return Grads{mul(g, self.tape().constant(*mask))};
  });
}

// ---- structure ------------------------------------------------------------

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows)
      throw ShapeError("concat_cols: shape mismatch " + parts[0].value().shape_str() + " vs " + p.value().shape_str());
    cols += p.cols();
  }
  Tensor v(rows, cols);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(pv.data() + r * pv.cols(), pv.cols(), v.data() + r * cols + off);
    offsets.push_back(off);
    off += pv.cols();
  }
  offsets.push_back(off);
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().record("concat_cols", inputs, std::move(v),
                                [offsets](const Var& g, const Var&, std::span<const bool> needs) {
                                  Grads out(needs.size());
                                  for (std::size_t i = 0; i < needs.size(); ++i)
                                    if (needs[i]) out[i] = slice_cols(g, offsets[i], offsets[i + 1]);
                                  return out;
                                });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols)
      throw ShapeError("concat_rows: shape mismatch " + parts[0].value().shape_str() + " vs " + p.value().shape_str());
    rows += p.rows();
  }
  Tensor v(rows, cols);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy_n(p.value().data(), p.value().size(), v.data() + off * cols);
    offsets.push_back(off);
    off += p.rows();
  }
  offsets.push_back(off);
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape().record("concat_rows", inputs, std::move(v),
                                [offsets](const Var& g, const Var&, std::span<const bool> needs) {
                                  Grads out(needs.size());
                                  for (std::size_t i = 0; i < needs.size(); ++i) {
                                    if (!needs[i]) continue;
                                    const auto idx = iota_range(offsets[i], offsets[i + 1]);
                                    out[i] = select_rows(g, idx);
                                  }
                                  return out;
                                });
}

Var select_rows(const Var& a, std::span<const std::size_t> index) {
  const Tensor& x = a.value();
  Tensor v(index.size(), x.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= x.rows())
      throw ShapeError("select_rows: index " + std::to_string(index[i]) + " out of range for " + x.shape_str());
    std::copy_n(x.data() + index[i] * x.cols(), x.cols(), v.data() + i * x.cols());
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  const std::size_t rows = x.rows();
  return a.tape().record("select_rows", {a}, std::move(v),
                         [idx, rows](const Var& g, const Var&, std::span<const bool>) {
                           return Grads{scatter_rows(g, idx, rows)};
                         });
}

Var select_cols(const Var& a, std::span<const std::size_t> index) {
  const Tensor& x = a.value();
  Tensor v(x.rows(), index.size());
  for (std::size_t j = 0; j < index.size(); ++j)
    if (index[j] >= x.cols())
      throw ShapeError("select_cols: index " + std::to_string(index[j]) + " out of range for " + x.shape_str());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t j = 0; j < index.size(); ++j) v(r, j) = x(r, index[j]);
  std::vector<std::size_t> idx(index.begin(), index.end());
  const std::size_t cols = x.cols();
  return a.tape().record("select_cols", {a}, std::move(v),
                         [idx, cols](const Var& g, const Var&, std::span<const bool>) {
                           return Grads{scatter_cols(g, idx, cols)};
                         });
}

Var scatter_rows(const Var& a, std::span<const std::size_t> index, std::size_t rows) {
  const Tensor& x = a.value();
  if (index.size() != x.rows())
    throw ShapeError("scatter_rows: " + std::to_string(index.size()) + " indices for " + x.shape_str());
  Tensor v(rows, x.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= rows) throw ShapeError("scatter_rows: index out of range");
    simd::kernels().axpy(x.cols(), 1.0, x.data() + i * x.cols(), v.data() + index[i] * x.cols());
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return a.tape().record("scatter_rows", {a}, std::move(v), [idx](const Var& g, const Var&, std::span<const bool>) {
    return Grads{select_rows(g, idx)};
  });
}

Var scatter_cols(const Var& a, std::span<const std::size_t> index, std::size_t cols) {
  const Tensor& x = a.value();
  if (index.size() != x.cols())
    throw ShapeError("scatter_cols: " + std::to_string(index.size()) + " indices for " + x.shape_str());
  for (std::size_t j : index)
    if (j >= cols) throw ShapeError("scatter_cols: index out of range");
  Tensor v(x.rows(), cols);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t j = 0; j < index.size(); ++j) v(r, index[j]) += x(r, j);
  std::vector<std::size_t> idx(index.begin(), index.end());
  return a.tape().record("scatter_cols", {a}, std::move(v), [idx](const Var& g, const Var&, std::span<const bool>) {
    return Grads{select_cols(g, idx)};
  });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.cols()) throw ShapeError("slice_cols: bad range for " + a.value().shape_str());
  const auto idx = iota_range(begin, end);
  return select_cols(a, idx);
}

Var reshape(const Var& a, std::size_t rows, std::size_t cols) {
  const std::size_t r = a.rows(), c = a.cols();
  return a.tape().record("reshape", {a}, a.value().reshaped(rows, cols),
                         [r, c](const Var& g, const Var&, std::span<const bool>) { return Grads{reshape(g, r, c)}; });
}

Var broadcast_rows(const Var& a, std::size_t rows) {
  const Tensor& x = a.value();
  if (x.rows() != 1) throw ShapeError("broadcast_rows: expected a single row, got " + x.shape_str());
  Tensor v(rows, x.cols());
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(x.data(), x.cols(), v.data() + r * x.cols());
  return a.tape().record("broadcast_rows", {a}, std::move(v),
                         [](const Var& g, const Var&, std::span<const bool>) { return Grads{col_sum(g)}; });
}

Var broadcast_cols(const Var& a, std::size_t cols) {
  const Tensor& x = a.value();
  if (x.cols() != 1) throw ShapeError("broadcast_cols: expected a single column, got " + x.shape_str());
  Tensor v(x.rows(), cols);
  for (std::size_t r = 0; r < x.rows(); ++r) std::fill_n(v.data() + r * cols, cols, x[r]);
  return a.tape().record("broadcast_cols", {a}, std::move(v),
                         [](const Var& g, const Var&, std::span<const bool>) { return Grads{row_sum(g)}; });
}

Var expand(const Var& a, std::size_t rows, std::size_t cols) {
  if (!a.value().is_scalar()) throw ShapeError("expand: expected a scalar, got " + a.value().shape_str());
  return a.tape().record("expand", {a}, Tensor(rows, cols, a.item()),
                         [](const Var& g, const Var&, std::span<const bool>) { return Grads{sum(g)}; });
}

Var repeat_rows(const Var& a, std::size_t times) {
  const Tensor& x = a.value();
  Tensor v(x.rows() * times, x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t t = 0; t < times; ++t)
      std::copy_n(x.data() + r * x.cols(), x.cols(), v.data() + (r * times + t) * x.cols());
  const std::size_t groups = x.rows();
  return a.tape().record("repeat_rows", {a}, std::move(v), [groups](const Var& g, const Var&, std::span<const bool>) {
    return Grads{segment_sum(g, groups)};
  });
}

Var segment_sum(const Var& a, std::size_t groups) {
  const Tensor& x = a.value();
  if (groups == 0 || x.rows() % groups != 0)
    throw ShapeError("segment_sum: " + x.shape_str() + " does not split into " + std::to_string(groups) + " groups");
  const std::size_t m = x.rows() / groups;
  Tensor v(groups, x.cols());
  for (std::size_t grp = 0; grp < groups; ++grp)
    for (std::size_t i = 0; i < m; ++i)
      simd::kernels().axpy(x.cols(), 1.0, x.data() + (grp * m + i) * x.cols(), v.data() + grp * x.cols());
  return a.tape().record("segment_sum", {a}, std::move(v),
                         [m](const Var& g, const Var&, std::span<const bool>) { return Grads{repeat_rows(g, m)}; });
}

Var detach(const Var& a) { return a.tape().constant(a.value()); }

}  // namespace dcem::ad
