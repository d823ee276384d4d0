// Portable reference kernels. These define the semantics the SIMD variants
// are tested against.

#include <cstddef>

#include "tables.hpp"

namespace cmwnet::kernels::detail {
namespace {

template <typename T>
void gemm_ref(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
              const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = trans_a ? a[p * lda + i] : a[i * lda + p];
      if (aip == T(0)) continue;
      if (!trans_b) {
        const T* brow = b + p * ldb;
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
      } else {
        for (std::size_t j = 0; j < n; ++j) crow[j] += aip * b[j * ldb + p];
      }
    }
  }
}

template <typename T>
void mul_ref(std::size_t n, const T* a, const T* b, T* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename T>
void mul_acc_ref(std::size_t n, const T* a, const T* b, T* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] += a[i] * b[i];
}

template <typename T>
void add_ref(std::size_t n, const T* a, const T* b, T* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename T>
void axpy_ref(std::size_t n, T alpha, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void relu_gate_ref(std::size_t n, const T* y, const T* g, T* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = y[i] > T(0) ? g[i] : T(0);
}

template <typename T>
constexpr KernelTable<T> make_scalar() {
  return {Backend::scalar, &gemm_ref<T>,  &mul_ref<T>,  &mul_acc_ref<T>,
          &add_ref<T>,     &axpy_ref<T>, &relu_gate_ref<T>};
}

}  // namespace

const KernelTable<float> kScalarF32 = make_scalar<float>();
const KernelTable<double> kScalarF64 = make_scalar<double>();

}  // namespace cmwnet::kernels::detail
