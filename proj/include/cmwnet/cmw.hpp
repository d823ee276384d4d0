#pragma once

// Cross-modal weighting: the generic enhancement EF = F + r1*F + r2*F, the
// depth-to-RGB (DW) and RGB-to-RGB (RW) weighting paths, the cross-scale
// CMW-L/CMW-M modules and the same-scale CMW-H module.
//
// "Primary" below is the stream being enhanced (RGB for DeR, depth for ReD)
// and "guide" the stream producing the cross-modal responses.

#include <array>
#include <map>
#include <string>

#include "cmwnet/binding.hpp"
#include "cmwnet/encoder.hpp"
#include "cmwnet/types.hpp"

namespace cmwnet::cmw {

// ---- tensor-level weighting primitives ----

/// F + r1*F + r2*F, elementwise.
template <typename T>
FeatureMap<T> enhance(const FeatureMap<T>& f, const ResponseMap<T>& r1, const ResponseMap<T>& r2);

/// r*F, elementwise (the DW and RW products).
template <typename T>
Tensor<T> modulate(const Tensor<T>& f, const Tensor<T>& r);

/// f_r + f_dw + f_rw.
template <typename T>
Tensor<T> aggregate(const Tensor<T>& f_r, const Tensor<T>& f_dw, const Tensor<T>& f_rw);

// ---- graph-level modules ----

/// Concatenation of the local (two 3x3) and, when enabled, global (7x7 and
/// dilated 3x3 rate 5) filter branches applied to one block's features.
/// `path` is the layer prefix, e.g. "cmw.dw3" or "cmw.rw3".
template <typename T>
Var local_global_features(const Binding<T>& b, Var features, const std::string& path);

/// Depth response r_dw of block l: sigmoid of the fusion layer, resampled
/// to the block it modulates (stride-2 conv for l in {1,3}, 2x deconv for
/// l in {2,4} in the default cross-adjacent pairing; same scale for l = 5).
template <typename T>
Var depth_response(const Binding<T>& b, Var f_lg, int block);

/// RGB response r_rw of block l, same shape as the block.
template <typename T>
Var rgb_response(const Binding<T>& b, Var f_r, int block);

/// f_dw for blocks 1..4: each block's primary features scaled by the depth
/// response whose target it is. Throws ShapeError on mis-wired pairs.
template <typename T>
std::array<Var, 4> depth_to_rgb(Graph<T>& g, const std::array<Var, 4>& f_r,
                                const std::array<Var, 4>& r_dw, const AblationSpec& a);

template <typename T>
Var rgb_to_rgb(Graph<T>& g, Var f_r, Var r_rw);

/// f_r + f_dw + f_rw where absent (invalid) terms contribute exact zeros.
template <typename T>
Var aggregate(Graph<T>& g, Var f_r, Var f_dw, Var f_rw);

struct CMWPairOutput {
  Var f_cmw;
  std::map<std::string, Var> intermediates;
};

/// Concatenation of f_de^(2k-1) with the 2x-deconvolved f_de^(2k).
template <typename T>
CMWPairOutput cmw_pair(const Binding<T>& b, Var f_de_low, Var f_de_high, int k);

/// Same-scale weighting of block 5; returns f_de^(5). Response maps are
/// stored in `intermediates` when given.
template <typename T>
Var cmw_high(const Binding<T>& b, Var f_r5, Var f_d5,
             std::map<std::string, Var>* intermediates = nullptr);

struct CMWOutputs {
  std::array<Var, 5> f_de;
  std::array<Var, 2> f_cmw;
  // r_dw*, r_rw*, f_lg*, f_dw*, f_rw* by name, for inspection and dumps.
  std::map<std::string, Var> intermediates;
};

/// Runs CMW-L, CMW-M and CMW-H (or their ablated replacements) over the
/// encoder output.
template <typename T>
CMWOutputs cross_modal_weighting(const Binding<T>& b, const encoder::EncoderOutput& enc);

}  // namespace cmwnet::cmw
