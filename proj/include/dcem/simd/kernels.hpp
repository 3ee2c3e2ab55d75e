#pragma once

// Dense double-precision kernels behind the autodiff tape.
//
// Every kernel has a portable scalar reference and, on x86-64, an AVX2+FMA
// variant. The variant is chosen once per process from CPUID; setting
// DCEM_SIMD=scalar in the environment forces the reference path.
// All matrices are row-major and contiguous.

#include <cstddef>
#include <string_view>

namespace dcem::simd {

enum class Isa { scalar, avx2 };

struct KernelTable {
  Isa isa;

  // C[m x n] = A[m x k] * B[k x n]
  void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
  // y += alpha * x
  void (*axpy)(std::size_t n, double alpha, const double* x, double* y);
  double (*dot)(std::size_t n, const double* x, const double* y);
  double (*sum)(std::size_t n, const double* x);
  // out = x + y, out = x - y, out = x * y (elementwise)
  void (*add)(std::size_t n, const double* x, const double* y, double* out);
  void (*sub)(std::size_t n, const double* x, const double* y, double* out);
  void (*mul)(std::size_t n, const double* x, const double* y, double* out);
  // out = alpha * x + beta
  void (*affine)(std::size_t n, double alpha, double beta, const double* x, double* out);
  // elementwise exp(x), log(1 + exp(x)), 1 / (1 + exp(-x))
  void (*exp)(std::size_t n, const double* x, double* out);
  void (*softplus)(std::size_t n, const double* x, double* out);
  void (*sigmoid)(std::size_t n, const double* x, double* out);
};

/// Kernel table for the active ISA (resolved on first use).
const KernelTable& kernels();

/// Reference kernels; always available.
const KernelTable& scalar_kernels();

/// AVX2 kernels, or nullptr when the binary was built without them or the
/// CPU lacks AVX2/FMA.
const KernelTable* avx2_kernels();

std::string_view isa_name(Isa isa);

// Blocked transposition used by the A^T B and A B^T products.
void transpose(std::size_t rows, std::size_t cols, const double* in, double* out);

}  // namespace dcem::simd
