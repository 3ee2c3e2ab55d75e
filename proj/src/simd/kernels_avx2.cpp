// Compiled with -mavx2 -mfma; only reached after a CPUID check.
#include "kernels_impl.hpp"

#include <immintrin.h>

#include <algorithm>

namespace dcem::simd::detail {

namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

// C[m x n] (+)= A[:, p0:p1] * B[p0:p1, :]; A has row stride k.
void gemm_panel(std::size_t m, std::size_t n, std::size_t k, std::size_t p0, std::size_t p1, const double* a,
                const double* b, double* c, bool accumulate) {
  auto init = [accumulate](const double* p) { return accumulate ? _mm256_loadu_pd(p) : _mm256_setzero_pd(); };
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* a0 = a + (i + 0) * k;
    const double* a1 = a + (i + 1) * k;
    const double* a2 = a + (i + 2) * k;
    const double* a3 = a + (i + 3) * k;
    double* c0p = c + (i + 0) * n;
    double* c1p = c + (i + 1) * n;
    double* c2p = c + (i + 2) * n;
    double* c3p = c + (i + 3) * n;
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) {
      __m256d c00 = init(c0p + j), c01 = init(c0p + j + 4);
      __m256d c10 = init(c1p + j), c11 = init(c1p + j + 4);
      __m256d c20 = init(c2p + j), c21 = init(c2p + j + 4);
      __m256d c30 = init(c3p + j), c31 = init(c3p + j + 4);
      for (std::size_t p = p0; p < p1; ++p) {
        const __m256d b0 = _mm256_loadu_pd(b + p * n + j);
        const __m256d b1 = _mm256_loadu_pd(b + p * n + j + 4);
        __m256d x = _mm256_broadcast_sd(a0 + p);
        c00 = _mm256_fmadd_pd(x, b0, c00);
        c01 = _mm256_fmadd_pd(x, b1, c01);
        x = _mm256_broadcast_sd(a1 + p);
        c10 = _mm256_fmadd_pd(x, b0, c10);
        c11 = _mm256_fmadd_pd(x, b1, c11);
        x = _mm256_broadcast_sd(a2 + p);
        c20 = _mm256_fmadd_pd(x, b0, c20);
        c21 = _mm256_fmadd_pd(x, b1, c21);
        x = _mm256_broadcast_sd(a3 + p);
        c30 = _mm256_fmadd_pd(x, b0, c30);
        c31 = _mm256_fmadd_pd(x, b1, c31);
      }
      _mm256_storeu_pd(c0p + j, c00);
      _mm256_storeu_pd(c0p + j + 4, c01);
      _mm256_storeu_pd(c1p + j, c10);
      _mm256_storeu_pd(c1p + j + 4, c11);
      _mm256_storeu_pd(c2p + j, c20);
      _mm256_storeu_pd(c2p + j + 4, c21);
      _mm256_storeu_pd(c3p + j, c30);
      _mm256_storeu_pd(c3p + j + 4, c31);
    }
    if (j < n) {
      const std::size_t rest = n - j;
      for (std::size_t r = 0; r < 4; ++r) {
        const double* arow = a + (i + r) * k;
        double* crow = c + (i + r) * n + j;
        std::size_t jj = 0;
        for (; jj + 4 <= rest; jj += 4) {
          __m256d acc = init(crow + jj);
          for (std::size_t p = p0; p < p1; ++p)
            acc = _mm256_fmadd_pd(_mm256_broadcast_sd(arow + p), _mm256_loadu_pd(b + p * n + j + jj), acc);
          _mm256_storeu_pd(crow + jj, acc);
        }
        for (; jj < rest; ++jj) {
          double acc = accumulate ? crow[jj] : 0.0;
          for (std::size_t p = p0; p < p1; ++p) acc += arow[p] * b[p * n + j + jj];
          crow[jj] = acc;
        }
      }
    }
  }
  for (; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      __m256d acc = init(crow + j);
      for (std::size_t p = p0; p < p1; ++p)
        acc = _mm256_fmadd_pd(_mm256_broadcast_sd(arow + p), _mm256_loadu_pd(b + p * n + j), acc);
      _mm256_storeu_pd(crow + j, acc);
    }
    for (; j < n; ++j) {
      double acc = accumulate ? crow[j] : 0.0;
      for (std::size_t p = p0; p < p1; ++p) acc += arow[p] * b[p * n + j];
      crow[j] = acc;
    }
  }
}

}  // namespace

void gemm_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  // Panels of B small enough to stay in L2 across the rows of A.
  const std::size_t kc = std::max<std::size_t>(16, (128 * 1024) / (8 * std::max<std::size_t>(n, 1)));
  if (k == 0) {
    std::fill(c, c + m * n, 0.0);
    return;
  }
  for (std::size_t p0 = 0; p0 < k; p0 += kc) gemm_panel(m, n, k, p0, std::min(k, p0 + kc), a, b, c, p0 > 0);
}

void axpy_avx2(std::size_t n, double alpha, const double* x, double* y) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

double dot_avx2(std::size_t n, const double* x, const double* y) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

double sum_avx2(std::size_t n, const double* x) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(x + i));
    acc1 = _mm256_add_pd(acc1, _mm256_loadu_pd(x + i + 4));
  }
  for (; i + 4 <= n; i += 4) acc0 = _mm256_add_pd(acc0, _mm256_loadu_pd(x + i));
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += x[i];
  return acc;
}

void add_avx2(std::size_t n, const double* x, const double* y, double* out) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] + y[i];
}

void sub_avx2(std::size_t n, const double* x, const double* y, double* out) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] - y[i];
}

void mul_avx2(std::size_t n, const double* x, const double* y, double* out) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

void affine_avx2(std::size_t n, double alpha, double beta, const double* x, double* out) {
  const __m256d va = _mm256_set1_pd(alpha);
  const __m256d vb = _mm256_set1_pd(beta);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vb));
  for (; i < n; ++i) out[i] = alpha * x[i] + beta;
}

namespace {

// exp on lanes already known to lie in [-708, 708]: x = n ln2 + r with
// |r| <= ln2 / 2, a degree-13 Taylor polynomial for exp(r), then 2^n
// assembled in the exponent field.
inline __m256d exp_in_range(__m256d x) {
  const __m256d log2e = _mm256_set1_pd(1.4426950408889634);
  const __m256d ln2_hi = _mm256_set1_pd(6.93147180369123816490e-01);
  const __m256d ln2_lo = _mm256_set1_pd(1.90821492927058770002e-10);
  const __m256d n = _mm256_round_pd(_mm256_mul_pd(x, log2e), _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fnmadd_pd(n, ln2_hi, x);
  r = _mm256_fnmadd_pd(n, ln2_lo, r);
  static constexpr double kInvFact[] = {
      1.0 / 6227020800.0, 1.0 / 479001600.0, 1.0 / 39916800.0, 1.0 / 3628800.0, 1.0 / 362880.0,
      1.0 / 40320.0,      1.0 / 5040.0,      1.0 / 720.0,      1.0 / 120.0,     1.0 / 24.0,
      1.0 / 6.0,          0.5,               1.0,              1.0};
  __m256d p = _mm256_set1_pd(kInvFact[0]);
  for (std::size_t i = 1; i < sizeof kInvFact / sizeof kInvFact[0]; ++i)
    p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(kInvFact[i]));
  const __m128i ni = _mm256_cvtpd_epi32(n);
  const __m256i bits = _mm256_slli_epi64(_mm256_add_epi64(_mm256_cvtepi32_epi64(ni), _mm256_set1_epi64x(1023)), 52);
  return _mm256_mul_pd(p, _mm256_castsi256_pd(bits));
}

// All four lanes finite and |x| <= 708.
inline bool in_range(__m256d x) {
  const __m256d ax = _mm256_andnot_pd(_mm256_set1_pd(-0.0), x);
  return _mm256_movemask_pd(_mm256_cmp_pd(ax, _mm256_set1_pd(708.0), _CMP_LE_OQ)) == 0xF;
}

// log(1 + t) for t in [0, 1]. u = 1 + t is reduced to m in [sqrt(1/2), sqrt(2)],
// log m = 2 atanh(s) with s = (m - 1) / (m + 1), and the rounding of u is
// corrected by the factor t / (u - 1).
inline __m256d log1p_unit(__m256d t) {
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d u = _mm256_add_pd(one, t);
  const __m256d big = _mm256_cmp_pd(u, _mm256_set1_pd(1.4142135623730951), _CMP_GT_OQ);
  const __m256d m = _mm256_blendv_pd(u, _mm256_mul_pd(u, _mm256_set1_pd(0.5)), big);
  const __m256d e = _mm256_and_pd(big, one);
  const __m256d s = _mm256_div_pd(_mm256_sub_pd(m, one), _mm256_add_pd(m, one));
  const __m256d s2 = _mm256_mul_pd(s, s);
  __m256d q = _mm256_set1_pd(1.0 / 23.0);
  for (int k = 21; k >= 1; k -= 2) q = _mm256_fmadd_pd(q, s2, _mm256_set1_pd(1.0 / k));
  const __m256d log_m = _mm256_mul_pd(_mm256_add_pd(s, s), q);
  const __m256d log_u = _mm256_fmadd_pd(e, _mm256_set1_pd(0.6931471805599453), log_m);
  const __m256d du = _mm256_sub_pd(u, one);
  const __m256d exact = _mm256_cmp_pd(du, _mm256_setzero_pd(), _CMP_EQ_OQ);
  const __m256d corrected = _mm256_div_pd(_mm256_mul_pd(log_u, t), _mm256_blendv_pd(du, one, exact));
  return _mm256_blendv_pd(corrected, t, exact);
}

}  // namespace

void exp_avx2(std::size_t n, const double* x, double* out) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(x + i);
    if (in_range(v))
      _mm256_storeu_pd(out + i, exp_in_range(v));
    else
      exp_scalar(4, x + i, out + i);
  }
  exp_scalar(n - i, x + i, out + i);
}

void softplus_avx2(std::size_t n, const double* x, double* out) {
  const __m256d sign = _mm256_set1_pd(-0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(x + i);
    if (!in_range(v)) {
      softplus_scalar(4, x + i, out + i);
      continue;
    }
    const __m256d t = exp_in_range(_mm256_or_pd(v, sign));  // exp(-|x|)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_max_pd(v, _mm256_setzero_pd()), log1p_unit(t)));
  }
  softplus_scalar(n - i, x + i, out + i);
}

void sigmoid_avx2(std::size_t n, const double* x, double* out) {
  const __m256d sign = _mm256_set1_pd(-0.0);
  const __m256d one = _mm256_set1_pd(1.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(x + i);
    if (!in_range(v)) {
      sigmoid_scalar(4, x + i, out + i);
      continue;
    }
    const __m256d t = exp_in_range(_mm256_or_pd(v, sign));
    const __m256d num = _mm256_blendv_pd(one, t, _mm256_cmp_pd(v, _mm256_setzero_pd(), _CMP_LT_OQ));
    _mm256_storeu_pd(out + i, _mm256_div_pd(num, _mm256_add_pd(one, t)));
  }
  sigmoid_scalar(n - i, x + i, out + i);
}

}  // namespace dcem::simd::detail
