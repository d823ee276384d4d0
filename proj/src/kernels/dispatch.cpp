#include <atomic>
#include <cstdlib>
#include <string>

#include "cmwnet/errors.hpp"
#include "cmwnet/kernels/kernels.hpp"
#include "tables.hpp"

namespace cmwnet::kernels {
namespace {

Backend detect() {
  if (const char* env = std::getenv("CMWNET_KERNELS"); env && *env) {
    const Backend requested = parse_backend(env);
    if (requested == Backend::avx2 && !avx2_available()) {
      throw ConfigError("CMWNET_KERNELS=avx2 requested but AVX2/FMA is unavailable");
    }
    return requested;
  }
  return avx2_available() ? Backend::avx2 : Backend::scalar;
}

std::atomic<int>& active_slot() {
  static std::atomic<int> slot{static_cast<int>(detect())};
  return slot;
}

}  // namespace

bool avx2_available() {
#if CMWNET_HAVE_AVX2 && (defined(__GNUC__) || defined(__clang__))
  static const bool ok = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return ok;
#else
  return false;
#endif
}

const char* backend_name(Backend b) { return b == Backend::avx2 ? "avx2" : "scalar"; }

Backend parse_backend(std::string_view name) {
  if (name == "scalar") return Backend::scalar;
  if (name == "avx2") return Backend::avx2;
  throw ConfigError("unknown kernel backend '" + std::string(name) + "'");
}

template <>
const KernelTable<float>& table<float>(Backend b) {
  if (b == Backend::avx2) {
#if CMWNET_HAVE_AVX2
    if (avx2_available()) return detail::kAvx2F32;
#endif
    throw ConfigError("avx2 kernels unavailable on this build or CPU");
  }
  return detail::kScalarF32;
}

template <>
const KernelTable<double>& table<double>(Backend b) {
  if (b == Backend::avx2) {
#if CMWNET_HAVE_AVX2
    if (avx2_available()) return detail::kAvx2F64;
#endif
    throw ConfigError("avx2 kernels unavailable on this build or CPU");
  }
  return detail::kScalarF64;
}

Backend active_backend() { return static_cast<Backend>(active_slot().load()); }

void set_active_backend(Backend b) {
  (void)table<float>(b);
  active_slot().store(static_cast<int>(b));
}

template <>
const KernelTable<float>& active<float>() {
  return table<float>(active_backend());
}

template <>
const KernelTable<double>& active<double>() {
  return table<double>(active_backend());
}

}  // namespace cmwnet::kernels
