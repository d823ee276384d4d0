#include "cmwnet/encoder.hpp"

#include "cmwnet/errors.hpp"

namespace cmwnet::encoder {
namespace {

template <typename T>
void check_input(const Tensor<T>& t, std::size_t channels, std::size_t resolution,
                 const char* what) {
  if (t.rank() != 3 || t.channels() != channels || t.height() != resolution ||
      t.width() != resolution) {
    throw ShapeError(std::string(what) + " input " + shape_string(t.shape()) + ", expected (" +
                     std::to_string(channels) + "," + std::to_string(resolution) + "," +
                     std::to_string(resolution) + ")");
  }
}

}  // namespace

template <typename T>
std::array<Var, 5> encode_stream(const Binding<T>& b, Var input, Stream stream) {
  const std::size_t r = b.config().input_resolution;
  check_input(b.graph().value(input), stream == Stream::depth ? 1 : 3, r,
              stream == Stream::depth ? "depth" : "rgb");
  std::array<Var, 5> blocks;
  Var x = input;
  for (int block = 1; block <= 5; ++block) {
    if (block > 1) x = ops::max_pool2(b.graph(), x);
    for (int i = 1; i <= arch::kConvsPerBlock[block - 1]; ++i) {
      std::string name = "encoder." + arch::encoder_layer(block, i);
      if (block == 1 && i == 1) name += stream == Stream::depth ? ".depth" : ".rgb";
      x = b.apply(name, x, Activation::relu);
    }
    blocks[block - 1] = x;
  }
  return blocks;
}

template <typename T>
EncoderOutput encode(const Binding<T>& b, Var rgb, Var depth) {
  if (!b.ablation().use_depth) {
    throw ConfigError("encode() needs the depth stream; use encode_rgb_only for w/o depth");
  }
  EncoderOutput out;
  out.rgb = encode_stream(b, rgb, Stream::rgb);
  out.depth = encode_stream(b, depth, Stream::depth);
  return out;
}

template <typename T>
std::array<Var, 5> encode_rgb_only(const Binding<T>& b, Var rgb) {
  if (b.ablation().use_depth) {
    throw ConfigError("encode_rgb_only() called on a build with use_depth=true");
  }
  return encode_stream(b, rgb, Stream::rgb);
}

template <typename T>
std::array<FeatureMap<T>, 5> feature_maps(const Graph<T>& g, const std::array<Var, 5>& blocks,
                                          Stream stream) {
  std::array<FeatureMap<T>, 5> out;
  for (int l = 0; l < 5; ++l) out[l] = FeatureMap<T>{g.value(blocks[l]), l + 1, stream};
  return out;
}

#define CMWNET_INSTANTIATE(T)                                                              \
  template std::array<Var, 5> encode_stream<T>(const Binding<T>&, Var, Stream);            \
  template EncoderOutput encode<T>(const Binding<T>&, Var, Var);                           \
  template std::array<Var, 5> encode_rgb_only<T>(const Binding<T>&, Var);                  \
  template std::array<FeatureMap<T>, 5> feature_maps<T>(const Graph<T>&,                   \
                                                        const std::array<Var, 5>&, Stream);
CMWNET_INSTANTIATE(float)
CMWNET_INSTANTIATE(double)
#undef CMWNET_INSTANTIATE

}  // namespace cmwnet::encoder
