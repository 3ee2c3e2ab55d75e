#pragma once

#include <cstddef>

namespace dcem::simd::detail {

void gemm_scalar(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
void axpy_scalar(std::size_t n, double alpha, const double* x, double* y);
double dot_scalar(std::size_t n, const double* x, const double* y);
double sum_scalar(std::size_t n, const double* x);
void add_scalar(std::size_t n, const double* x, const double* y, double* out);
void sub_scalar(std::size_t n, const double* x, const double* y, double* out);
void mul_scalar(std::size_t n, const double* x, const double* y, double* out);
void affine_scalar(std::size_t n, double alpha, double beta, const double* x, double* out);
void exp_scalar(std::size_t n, const double* x, double* out);
void softplus_scalar(std::size_t n, const double* x, double* out);
void sigmoid_scalar(std::size_t n, const double* x, double* out);

#if defined(DCEM_HAVE_AVX2)
void gemm_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
void axpy_avx2(std::size_t n, double alpha, const double* x, double* y);
double dot_avx2(std::size_t n, const double* x, const double* y);
double sum_avx2(std::size_t n, const double* x);
void add_avx2(std::size_t n, const double* x, const double* y, double* out);
void sub_avx2(std::size_t n, const double* x, const double* y, double* out);
void mul_avx2(std::size_t n, const double* x, const double* y, double* out);
void affine_avx2(std::size_t n, double alpha, double beta, const double* x, double* out);
void exp_avx2(std::size_t n, const double* x, double* out);
void softplus_avx2(std::size_t n, const double* x, double* out);
void sigmoid_avx2(std::size_t n, const double* x, double* out);
#endif

}  // namespace dcem::simd::detail
