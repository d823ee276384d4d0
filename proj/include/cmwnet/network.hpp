#pragma once

#include "cmwnet/binding.hpp"
#include "cmwnet/cmw.hpp"
#include "cmwnet/decoder.hpp"
#include "cmwnet/encoder.hpp"

namespace cmwnet {

struct ForwardPass {
  encoder::EncoderOutput enc;
  cmw::CMWOutputs cmw;
  decoder::DecoderOutput dec;
};

/// Full network: encoder, CMW modules, decoder. `depth` is ignored (may be
/// invalid) for builds without the depth stream.
template <typename T>
ForwardPass forward(const Binding<T>& b, Var rgb, Var depth);

/// Shapes actually produced by a forward pass, keyed like expected_shapes().
template <typename T>
ShapeTable measured_shapes(const Graph<T>& g, const ForwardPass& pass, const AblationSpec& a);

/// Inference on one input at the network resolution; returns S1's
/// foreground probability.
template <typename T>
SaliencyMap predict_saliency(const ParameterStore<T>& params, const NetworkConfig& config,
                             const AblationSpec& ablation, const Tensor<float>& rgb,
                             const Tensor<float>& depth);

}  // namespace cmwnet
