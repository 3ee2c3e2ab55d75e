#include "dcem/simd/kernels.hpp"

#include <cstdlib>
#include <string>

#include "kernels_impl.hpp"

namespace dcem::simd {

namespace {

constexpr KernelTable kScalar{
    Isa::scalar,          detail::gemm_scalar, detail::axpy_scalar, detail::dot_scalar, detail::sum_scalar,
    detail::add_scalar,   detail::sub_scalar,  detail::mul_scalar,  detail::affine_scalar,
    detail::exp_scalar,   detail::softplus_scalar, detail::sigmoid_scalar,
};

#if defined(DCEM_HAVE_AVX2)
constexpr KernelTable kAvx2{
    Isa::avx2,         detail::gemm_avx2, detail::axpy_avx2, detail::dot_avx2, detail::sum_avx2,
    detail::add_avx2,  detail::sub_avx2,  detail::mul_avx2,  detail::affine_avx2,
    detail::exp_avx2,  detail::softplus_avx2, detail::sigmoid_avx2,
};
#endif

bool cpu_has_avx2() {
#if defined(DCEM_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable& resolve() {
  if (const char* forced = std::getenv("DCEM_SIMD"); forced != nullptr && std::string(forced) == "scalar")
    return kScalar;
  if (const KernelTable* t = avx2_kernels()) return *t;
  return kScalar;
}

}  // namespace

const KernelTable& scalar_kernels() { return kScalar; }

const KernelTable* avx2_kernels() {
#if defined(DCEM_HAVE_AVX2)
  static const bool available = cpu_has_avx2();
  return available ? &kAvx2 : nullptr;
#else
  return nullptr;
#endif
}

const KernelTable& kernels() {
  static const KernelTable& active = resolve();
  return active;
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
  }
  return "unknown";
}

void transpose(std::size_t rows, std::size_t cols, const double* in, double* out) {
  constexpr std::size_t kBlock = 32;
  for (std::size_t i0 = 0; i0 < rows; i0 += kBlock) {
    const std::size_t i1 = i0 + kBlock < rows ? i0 + kBlock : rows;
    for (std::size_t j0 = 0; j0 < cols; j0 += kBlock) {
      const std::size_t j1 = j0 + kBlock < cols ? j0 + kBlock : cols;
      for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = j0; j < j1; ++j) out[j * rows + i] = in[i * cols + j];
    }
  }
}

}  // namespace dcem::simd
