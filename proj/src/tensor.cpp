#include "dcem/tensor.hpp"

#include <algorithm>
#include <cmath>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "dcem/simd/kernels.hpp"

namespace dcem {

namespace {

#if defined(__GLIBC__)
// Tape values are large, short-lived buffers. Served by mmap, every one of
// them is faulted in and zeroed by the kernel; keeping them on the heap lets
// freed blocks be reused.
const bool kHeapTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 512 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return true;
}();
#endif

}  // namespace

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
  if (data_.size() != rows * cols)
    throw ShapeError("Tensor: " + std::to_string(data_.size()) + " values for shape " + dcem::shape_str(rows, cols));
}

Tensor Tensor::column(std::span<const double> values) {
  return Tensor(values.size(), 1, std::vector<double>(values.begin(), values.end()));
}

Tensor Tensor::column(std::initializer_list<double> values) { return Tensor(values.size(), 1, std::vector<double>(values)); }

Tensor Tensor::row(std::initializer_list<double> values) { return Tensor(1, values.size(), std::vector<double>(values)); }

double Tensor::item() const {
  if (!is_scalar()) throw ShapeError("item() on non-scalar tensor of shape " + shape_str());
  return data_[0];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(std::size_t rows, std::size_t cols) const {
  if (rows * cols != size()) throw ShapeError("reshape " + shape_str() + " -> " + dcem::shape_str(rows, cols));
  Tensor out = *this;
  out.rows_ = rows;
  out.cols_ = cols;
  return out;
}

Tensor Tensor::transposed() const {
  Tensor out(cols_, rows_);
  simd::transpose(rows_, cols_, data(), out.data());
  return out;
}

std::string Tensor::shape_str() const { return dcem::shape_str(rows_, cols_); }

std::string shape_str(std::size_t rows, std::size_t cols) {
  return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) throw ShapeError(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: shape mismatch " + a.shape_str() + " * " + b.shape_str());
  Tensor out(a.rows(), b.cols());
  if (out.size() == 0) return out;
  if (a.cols() == 0) return out;
  simd::kernels().gemm(a.rows(), b.cols(), a.cols(), a.data(), b.data(), out.data());
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) throw ShapeError("matmul_tn: shape mismatch " + a.shape_str() + "^T * " + b.shape_str());
  return matmul(a.transposed(), b);
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) throw ShapeError("matmul_nt: shape mismatch " + a.shape_str() + " * " + b.shape_str() + "^T");
  return matmul(a, b.transposed());
}

Tensor operator+(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.rows(), a.cols());
  simd::kernels().add(a.size(), a.data(), b.data(), out.data());
  return out;
}

Tensor operator-(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.rows(), a.cols());
  simd::kernels().sub(a.size(), a.data(), b.data(), out.data());
  return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.rows(), a.cols());
  simd::kernels().mul(a.size(), a.data(), b.data(), out.data());
  return out;
}

Tensor operator*(double s, const Tensor& a) {
  Tensor out(a.rows(), a.cols());
  simd::kernels().affine(a.size(), s, 0.0, a.data(), out.data());
  return out;
}

double sum(const Tensor& a) { return simd::kernels().sum(a.size(), a.data()); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace dcem
