#pragma once

#include <array>

#include "cmwnet/binding.hpp"
#include "cmwnet/types.hpp"

namespace cmwnet::encoder {

/// Last-layer features of the five blocks of each stream. depth is empty
/// (invalid Vars) when the build has no depth stream.
struct EncoderOutput {
  std::array<Var, 5> rgb;
  std::array<Var, 5> depth;
  bool has_depth() const { return depth[0].valid(); }
};

/// VGG16-shaped stream: 2-2-3-3-3 conv+ReLU blocks with 2x2 max pooling
/// between blocks; block 5 is taken before any fifth pool. Only conv1_1 is
/// stream specific.
template <typename T>
std::array<Var, 5> encode_stream(const Binding<T>& b, Var input, Stream stream);

/// Siamese encoding of both streams. Inputs must be input_resolution square;
/// rgb has 3 channels, depth has 1.
template <typename T>
EncoderOutput encode(const Binding<T>& b, Var rgb, Var depth);

/// RGB-only encoding for builds without the depth stream.
template <typename T>
std::array<Var, 5> encode_rgb_only(const Binding<T>& b, Var rgb);

/// Copies a graph's block outputs into tagged feature maps.
template <typename T>
std::array<FeatureMap<T>, 5> feature_maps(const Graph<T>& g, const std::array<Var, 5>& blocks,
                                          Stream stream);

}  // namespace cmwnet::encoder
