#pragma once

#include <array>

#include "cmwnet/binding.hpp"
#include "cmwnet/types.hpp"

namespace cmwnet::decoder {

/// Decoder levels and the 2-channel logit predictions S1..S4 (index 0..3).
/// S2..S4 are invalid Vars when deep supervision is off.
struct DecoderOutput {
  Var d5, d34, d12;
  std::array<Var, 4> predictions;
};

/// D5 on f_de^(5); 4x deconvolution; D3&4 on [up, f_cmw^(2)]; 4x
/// deconvolution; D1&2 on [up, f_cmw^(1)]. Heads: S3 after D5, S2 after D3&4,
/// S1 after D1&2, and S4 on the primary stream's raw block-5 features.
template <typename T>
DecoderOutput decode(const Binding<T>& b, Var f_de5, Var f_cmw2, Var f_cmw1, Var block5);

/// Foreground probability from 2-channel logits (channel 1 = foreground).
template <typename T>
SaliencyMap to_saliency(const Tensor<T>& logits);

}  // namespace cmwnet::decoder
