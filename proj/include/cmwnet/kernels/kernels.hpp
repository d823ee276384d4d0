#pragma once

// Numeric inner loops used by the graph operators. Each entry has a portable
// scalar reference and, where the target supports it, an AVX2+FMA variant.
// The active table is selected once at first use from the CPU's features;
// CMWNET_KERNELS=scalar|avx2 overrides the choice.

#include <cstddef>
#include <string_view>

namespace cmwnet::kernels {

enum class Backend { scalar, avx2 };

template <typename T>
struct KernelTable {
  Backend backend;
  // C[m x n] += op(A)[m x k] * op(B)[k x n]; row-major storage with leading
  // dimensions lda/ldb/ldc. op(X) is X^T when the matching trans flag is set.
  void (*gemm)(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
               const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc);
  void (*mul)(std::size_t n, const T* a, const T* b, T* out);      // out = a * b
  void (*mul_acc)(std::size_t n, const T* a, const T* b, T* out);  // out += a * b
  void (*add)(std::size_t n, const T* a, const T* b, T* out);      // out = a + b
  void (*axpy)(std::size_t n, T alpha, const T* x, T* y);          // y += alpha * x
  // out = (y > 0) ? g : 0, the ReLU backward gate.
  void (*relu_gate)(std::size_t n, const T* y, const T* g, T* out);
};

bool avx2_available();
const char* backend_name(Backend b);
Backend parse_backend(std::string_view name);

/// Table for a specific backend. Throws ConfigError if the backend is not
/// compiled in or not supported by this CPU.
template <typename T>
const KernelTable<T>& table(Backend b);

template <typename T>
const KernelTable<T>& active();

Backend active_backend();
void set_active_backend(Backend b);

}  // namespace cmwnet::kernels
