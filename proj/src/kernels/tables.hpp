#pragma once

#include "cmwnet/kernels/kernels.hpp"

namespace cmwnet::kernels::detail {

extern const KernelTable<float> kScalarF32;
extern const KernelTable<double> kScalarF64;

#if CMWNET_HAVE_AVX2
extern const KernelTable<float> kAvx2F32;
extern const KernelTable<double> kAvx2F64;
#endif

}  // namespace cmwnet::kernels::detail
