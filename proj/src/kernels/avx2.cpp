// AVX2 + FMA kernels. This translation unit is the only one compiled with
// -mavx2 -mfma; nothing here may run unless avx2_available() is true.

#include <immintrin.h>

#include <algorithm>
#include <cstddef>
#include <vector>

#include "tables.hpp"

namespace cmwnet::kernels::detail {
namespace {

constexpr std::size_t kKc = 256;
constexpr std::size_t kMc = 96;
constexpr std::size_t kNc = 2048;

// Packs op(A)[ic:ic+mc, pc:pc+kc] into MR-row panels, zero padded.
template <typename T, std::size_t MR>
void pack_a(bool trans, const T* a, std::size_t lda, std::size_t ic, std::size_t pc,
            std::size_t mc, std::size_t kc, T* dst) {
  for (std::size_t ir = 0; ir < mc; ir += MR) {
    const std::size_t mr = std::min(MR, mc - ir);
    for (std::size_t p = 0; p < kc; ++p) {
      std::size_t i = 0;
      if (!trans) {
        for (; i < mr; ++i) dst[i] = a[(ic + ir + i) * lda + pc + p];
      } else {
        const T* src = a + (pc + p) * lda + ic + ir;
        for (; i < mr; ++i) dst[i] = src[i];
      }
      for (; i < MR; ++i) dst[i] = T(0);
      dst += MR;
    }
  }
}

// Packs op(B)[pc:pc+kc, jc:jc+nc] into NR-column panels, zero padded.
template <typename T, std::size_t NR>
void pack_b(bool trans, const T* b, std::size_t ldb, std::size_t pc, std::size_t jc,
            std::size_t kc, std::size_t nc, T* dst) {
  for (std::size_t jr = 0; jr < nc; jr += NR) {
    const std::size_t nr = std::min(NR, nc - jr);
    for (std::size_t p = 0; p < kc; ++p) {
      std::size_t j = 0;
      if (!trans) {
        const T* src = b + (pc + p) * ldb + jc + jr;
        for (; j < nr; ++j) dst[j] = src[j];
      } else {
        for (; j < nr; ++j) dst[j] = b[(jc + jr + j) * ldb + pc + p];
      }
      for (; j < NR; ++j) dst[j] = T(0);
      dst += NR;
    }
  }
}

// 6x16 single-precision micro-kernel: C[mr x nr] += Apanel * Bpanel.
void kernel_f32(std::size_t kc, const float* ap, const float* bp, float* c, std::size_t ldc,
                std::size_t mr, std::size_t nr) {
  __m256 acc[6][2];
  for (auto& row : acc) row[0] = row[1] = _mm256_setzero_ps();
  for (std::size_t p = 0; p < kc; ++p) {
    const __m256 b0 = _mm256_loadu_ps(bp);
    const __m256 b1 = _mm256_loadu_ps(bp + 8);
    for (int i = 0; i < 6; ++i) {
      const __m256 ai = _mm256_broadcast_ss(ap + i);
      acc[i][0] = _mm256_fmadd_ps(ai, b0, acc[i][0]);
      acc[i][1] = _mm256_fmadd_ps(ai, b1, acc[i][1]);
    }
    ap += 6;
    bp += 16;
  }
  if (mr == 6 && nr == 16) {
    for (int i = 0; i < 6; ++i) {
      float* crow = c + i * ldc;
      _mm256_storeu_ps(crow, _mm256_add_ps(_mm256_loadu_ps(crow), acc[i][0]));
      _mm256_storeu_ps(crow + 8, _mm256_add_ps(_mm256_loadu_ps(crow + 8), acc[i][1]));
    }
    return;
  }
  alignas(32) float tmp[6][16];
  for (int i = 0; i < 6; ++i) {
    _mm256_store_ps(tmp[i], acc[i][0]);
    _mm256_store_ps(tmp[i] + 8, acc[i][1]);
  }
  for (std::size_t i = 0; i < mr; ++i)
    for (std::size_t j = 0; j < nr; ++j) c[i * ldc + j] += tmp[i][j];
}

// 6x8 double-precision micro-kernel.
void kernel_f64(std::size_t kc, const double* ap, const double* bp, double* c,
                std::size_t ldc, std::size_t mr, std::size_t nr) {
  __m256d acc[6][2];
  for (auto& row : acc) row[0] = row[1] = _mm256_setzero_pd();
  for (std::size_t p = 0; p < kc; ++p) {
    const __m256d b0 = _mm256_loadu_pd(bp);
    const __m256d b1 = _mm256_loadu_pd(bp + 4);
    for (int i = 0; i < 6; ++i) {
      const __m256d ai = _mm256_broadcast_sd(ap + i);
      acc[i][0] = _mm256_fmadd_pd(ai, b0, acc[i][0]);
      acc[i][1] = _mm256_fmadd_pd(ai, b1, acc[i][1]);
    }
    ap += 6;
    bp += 8;
  }
  if (mr == 6 && nr == 8) {
    for (int i = 0; i < 6; ++i) {
      double* crow = c + i * ldc;
      _mm256_storeu_pd(crow, _mm256_add_pd(_mm256_loadu_pd(crow), acc[i][0]));
      _mm256_storeu_pd(crow + 4, _mm256_add_pd(_mm256_loadu_pd(crow + 4), acc[i][1]));
    }
    return;
  }
  alignas(32) double tmp[6][8];
  for (int i = 0; i < 6; ++i) {
    _mm256_store_pd(tmp[i], acc[i][0]);
    _mm256_store_pd(tmp[i] + 4, acc[i][1]);
  }
  for (std::size_t i = 0; i < mr; ++i)
    for (std::size_t j = 0; j < nr; ++j) c[i * ldc + j] += tmp[i][j];
}

template <typename T, std::size_t MR, std::size_t NR, auto Kernel>
void gemm_blocked(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
                  const T* a, std::size_t lda, const T* b, std::size_t ldb, T* c,
                  std::size_t ldc) {
  if (m == 0 || n == 0 || k == 0) return;
  thread_local std::vector<T> apack;
  thread_local std::vector<T> bpack;
  apack.resize(((kMc + MR - 1) / MR) * MR * kKc);
  bpack.resize(((kNc + NR - 1) / NR) * NR * kKc);
  for (std::size_t jc = 0; jc < n; jc += kNc) {
    const std::size_t nc = std::min(kNc, n - jc);
    for (std::size_t pc = 0; pc < k; pc += kKc) {
      const std::size_t kc = std::min(kKc, k - pc);
      pack_b<T, NR>(trans_b, b, ldb, pc, jc, kc, nc, bpack.data());
      for (std::size_t ic = 0; ic < m; ic += kMc) {
        const std::size_t mc = std::min(kMc, m - ic);
        pack_a<T, MR>(trans_a, a, lda, ic, pc, mc, kc, apack.data());
        for (std::size_t jr = 0; jr < nc; jr += NR) {
          const std::size_t nr = std::min(NR, nc - jr);
          for (std::size_t ir = 0; ir < mc; ir += MR) {
            const std::size_t mr = std::min(MR, mc - ir);
            Kernel(kc, apack.data() + ir * kc, bpack.data() + jr * kc,
                   c + (ic + ir) * ldc + jc + jr, ldc, mr, nr);
          }
        }
      }
    }
  }
}

void gemm_f32(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const float* a,
              std::size_t lda, const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  gemm_blocked<float, 6, 16, kernel_f32>(ta, tb, m, n, k, a, lda, b, ldb, c, ldc);
}

void gemm_f64(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const double* a,
              std::size_t lda, const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  gemm_blocked<double, 6, 8, kernel_f64>(ta, tb, m, n, k, a, lda, b, ldb, c, ldc);
}

// Thin wrappers so the elementwise loops share one body per precision.
struct F32 {
  using T = float;
  using V = __m256;
  static constexpr std::size_t kLanes = 8;
  static V load(const T* p) { return _mm256_loadu_ps(p); }
  static void store(T* p, V v) { _mm256_storeu_ps(p, v); }
  static V set1(T x) { return _mm256_set1_ps(x); }
  static V zero() { return _mm256_setzero_ps(); }
  static V mul(V a, V b) { return _mm256_mul_ps(a, b); }
  static V add(V a, V b) { return _mm256_add_ps(a, b); }
  static V fmadd(V a, V b, V c) { return _mm256_fmadd_ps(a, b, c); }
  static V gate(V y, V g) { return _mm256_and_ps(_mm256_cmp_ps(y, zero(), _CMP_GT_OQ), g); }
};

struct F64 {
  using T = double;
  using V = __m256d;
  static constexpr std::size_t kLanes = 4;
  static V load(const T* p) { return _mm256_loadu_pd(p); }
  static void store(T* p, V v) { _mm256_storeu_pd(p, v); }
  static V set1(T x) { return _mm256_set1_pd(x); }
  static V zero() { return _mm256_setzero_pd(); }
  static V mul(V a, V b) { return _mm256_mul_pd(a, b); }
  static V add(V a, V b) { return _mm256_add_pd(a, b); }
  static V fmadd(V a, V b, V c) { return _mm256_fmadd_pd(a, b, c); }
  static V gate(V y, V g) { return _mm256_and_pd(_mm256_cmp_pd(y, zero(), _CMP_GT_OQ), g); }
};

template <typename S>
void mul_simd(std::size_t n, const typename S::T* a, const typename S::T* b, typename S::T* out) {
  std::size_t i = 0;
  for (; i + S::kLanes <= n; i += S::kLanes) S::store(out + i, S::mul(S::load(a + i), S::load(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename S>
void mul_acc_simd(std::size_t n, const typename S::T* a, const typename S::T* b,
                  typename S::T* out) {
  std::size_t i = 0;
  for (; i + S::kLanes <= n; i += S::kLanes)
    S::store(out + i, S::fmadd(S::load(a + i), S::load(b + i), S::load(out + i)));
  for (; i < n; ++i) out[i] += a[i] * b[i];
}

template <typename S>
void add_simd(std::size_t n, const typename S::T* a, const typename S::T* b, typename S::T* out) {
  std::size_t i = 0;
  for (; i + S::kLanes <= n; i += S::kLanes) S::store(out + i, S::add(S::load(a + i), S::load(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename S>
void axpy_simd(std::size_t n, typename S::T alpha, const typename S::T* x, typename S::T* y) {
  const auto va = S::set1(alpha);
  std::size_t i = 0;
  for (; i + S::kLanes <= n; i += S::kLanes)
    S::store(y + i, S::fmadd(va, S::load(x + i), S::load(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

template <typename S>
void relu_gate_simd(std::size_t n, const typename S::T* y, const typename S::T* g,
                    typename S::T* out) {
  using T = typename S::T;
  std::size_t i = 0;
  for (; i + S::kLanes <= n; i += S::kLanes) S::store(out + i, S::gate(S::load(y + i), S::load(g + i)));
  for (; i < n; ++i) out[i] = y[i] > T(0) ? g[i] : T(0);
}

}  // namespace

const KernelTable<float> kAvx2F32 = {Backend::avx2,      &gemm_f32,         &mul_simd<F32>,
                                      &mul_acc_simd<F32>, &add_simd<F32>,    &axpy_simd<F32>,
                                      &relu_gate_simd<F32>};
const KernelTable<double> kAvx2F64 = {Backend::avx2,      &gemm_f64,         &mul_simd<F64>,
                                       &mul_acc_simd<F64>, &add_simd<F64>,    &axpy_simd<F64>,
                                       &relu_gate_simd<F64>};

}  // namespace cmwnet::kernels::detail
