#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "dcem/simd/kernels.hpp"
#include "dcem/tensor.hpp"

using dcem::simd::KernelTable;

namespace {

std::vector<double> random_vec(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

double max_rel(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(b[i])));
  return m;
}

// Shapes chosen to hit every tail path of the 4x8 register block.
const std::size_t kDims[] = {1, 2, 3, 4, 5, 7, 8, 9, 13, 16, 17, 31, 64, 100};

}  // namespace

TEST_CASE("scalar gemm matches a naive triple loop") {
  const KernelTable& s = dcem::simd::scalar_kernels();
  std::mt19937_64 rng(1);
  for (std::size_t m : {1, 3, 6}) {
    for (std::size_t n : {1, 5, 9}) {
      for (std::size_t k : {1, 4, 7}) {
        auto a = random_vec(rng, m * k), b = random_vec(rng, k * n);
        std::vector<double> c(m * n), ref(m * n, 0.0);
        s.gemm(m, n, k, a.data(), b.data(), c.data());
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j)
            for (std::size_t p = 0; p < k; ++p) ref[i * n + j] += a[i * k + p] * b[p * n + j];
        CHECK(max_rel(c, ref) < 1e-14);
      }
    }
  }
}

TEST_CASE("avx2 kernels are equivalent to the scalar reference") {
  const KernelTable* v = dcem::simd::avx2_kernels();
  if (v == nullptr) {
    MESSAGE("AVX2 unavailable on this machine; equivalence checks skipped");
    return;
  }
  const KernelTable& s = dcem::simd::scalar_kernels();
  std::mt19937_64 rng(7);

  SUBCASE("gemm") {
    for (std::size_t m : kDims)
      for (std::size_t n : kDims)
        for (std::size_t k : {std::size_t{1}, std::size_t{3}, std::size_t{8}, std::size_t{33}}) {
          auto a = random_vec(rng, m * k), b = random_vec(rng, k * n);
          std::vector<double> c1(m * n, -1.0), c2(m * n, -2.0);
          s.gemm(m, n, k, a.data(), b.data(), c1.data());
          v->gemm(m, n, k, a.data(), b.data(), c2.data());
          INFO("m=" << m << " n=" << n << " k=" << k);
          CHECK(max_rel(c2, c1) < 1e-13);
        }
  }
  SUBCASE("vector kernels") {
    for (std::size_t n : kDims) {
      auto x = random_vec(rng, n), y = random_vec(rng, n);
      CHECK(std::abs(v->dot(n, x.data(), y.data()) - s.dot(n, x.data(), y.data())) < 1e-12);
      CHECK(std::abs(v->sum(n, x.data()) - s.sum(n, x.data())) < 1e-12);
      std::vector<double> o1(n), o2(n);
      s.add(n, x.data(), y.data(), o1.data());
      v->add(n, x.data(), y.data(), o2.data());
      CHECK(o1 == o2);
      s.sub(n, x.data(), y.data(), o1.data());
      v->sub(n, x.data(), y.data(), o2.data());
      CHECK(o1 == o2);
      s.mul(n, x.data(), y.data(), o1.data());
      v->mul(n, x.data(), y.data(), o2.data());
      CHECK(o1 == o2);
      s.affine(n, 1.5, -0.25, x.data(), o1.data());
      v->affine(n, 1.5, -0.25, x.data(), o2.data());
      CHECK(max_rel(o2, o1) < 1e-15);
      auto y1 = y, y2 = y;
      s.axpy(n, -0.7, x.data(), y1.data());
      v->axpy(n, -0.7, x.data(), y2.data());
      CHECK(max_rel(y2, y1) < 1e-15);
    }
  }
}

TEST_CASE("avx2 transcendental kernels match the scalar reference") {
  const KernelTable* v = dcem::simd::avx2_kernels();
  if (v == nullptr) {
    MESSAGE("AVX2 unavailable; skipped");
    return;
  }
  const KernelTable& s = dcem::simd::scalar_kernels();
  std::mt19937_64 rng(7);
  std::vector<double> x;
  for (double scale : {1e-12, 1e-6, 0.01, 0.5, 1.0, 3.0, 20.0, 200.0})
    for (double e : random_vec(rng, 4001)) x.push_back(e * scale);
  // lanes at and beyond the vector range, plus specials
  for (double e : {0.0, -0.0, 707.9, 708.0, -708.0, 708.5, -708.5, 709.7, -744.0, -800.0, 800.0, 37.0, -37.0,
                   double(INFINITY), -double(INFINITY)})
    x.push_back(e);
  x.push_back(1.5);  // odd tail
  const std::size_t n = x.size();

  auto rel = [](double a, double b) {
    if (a == b) return 0.0;
    return std::abs(a - b) / std::max(std::abs(b), 1e-300);
  };
  std::vector<double> a(n), b(n);
  double worst = 0.0;
  v->exp(n, x.data(), a.data());
  s.exp(n, x.data(), b.data());
  for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, rel(a[i], b[i]));
  CHECK(worst <= 4e-16);

  worst = 0.0;
  v->softplus(n, x.data(), a.data());
  s.softplus(n, x.data(), b.data());
  for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, rel(a[i], b[i]));
  CHECK(worst <= 1e-15);

  worst = 0.0;
  v->sigmoid(n, x.data(), a.data());
  s.sigmoid(n, x.data(), b.data());
  for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, rel(a[i], b[i]));
  CHECK(worst <= 1e-15);

  const double nan_in[4] = {NAN, 1.0, 2.0, 3.0};
  double out[4];
  v->exp(4, nan_in, out);
  CHECK(std::isnan(out[0]));
  CHECK(out[1] == std::exp(1.0));
}

TEST_CASE("active kernel table reports its ISA") {
  const auto& k = dcem::simd::kernels();
  CHECK((k.isa == dcem::simd::Isa::scalar || k.isa == dcem::simd::Isa::avx2));
  CHECK(!dcem::simd::isa_name(k.isa).empty());
}

TEST_CASE("transpose and tensor products") {
  std::mt19937_64 rng(3);
  dcem::Tensor a(5, 3), b(5, 4);
  std::normal_distribution<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = d(rng);
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = d(rng);
  const dcem::Tensor at = a.transposed();
  CHECK(at.rows() == 3);
  CHECK(at(2, 4) == a(4, 2));
  const dcem::Tensor tn = dcem::matmul_tn(a, b);
  const dcem::Tensor ref = dcem::matmul(at, b);
  CHECK(dcem::max_abs_diff(tn, ref) == 0.0);
  CHECK_THROWS_AS(dcem::matmul(a, b), dcem::ShapeError);
}
