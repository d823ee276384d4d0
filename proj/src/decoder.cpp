#include "cmwnet/decoder.hpp"

#include <cmath>

#include "cmwnet/errors.hpp"

namespace cmwnet::decoder {
namespace {

template <typename T>
void check_concat(const Graph<T>& g, Var a, Var b, const char* level) {
  const auto& x = g.value(a);
  const auto& y = g.value(b);
  if (x.height() != y.height() || x.width() != y.width()) {
    throw ShapeError(std::string("decoder ") + level + " skip " + shape_string(y.shape()) +
                     " does not match upsampled " + shape_string(x.shape()));
  }
}

}  // namespace

template <typename T>
DecoderOutput decode(const Binding<T>& b, Var f_de5, Var f_cmw2, Var f_cmw1, Var block5) {
  Graph<T>& g = b.graph();
  DecoderOutput out;
  Var x = b.apply("decoder.d5.conv1", f_de5, Activation::relu);
  out.d5 = b.apply("decoder.d5.conv2", x, Activation::relu);

  Var up = b.apply("decoder.up5", out.d5);
  check_concat(g, up, f_cmw2, "D3&4");
  x = b.apply("decoder.d34.conv1", ops::concat_channels(g, {up, f_cmw2}), Activation::relu);
  out.d34 = b.apply("decoder.d34.conv2", x, Activation::relu);

  up = b.apply("decoder.up34", out.d34);
  check_concat(g, up, f_cmw1, "D1&2");
  x = b.apply("decoder.d12.conv1", ops::concat_channels(g, {up, f_cmw1}), Activation::relu);
  out.d12 = b.apply("decoder.d12.conv2", x, Activation::relu);

  out.predictions[0] = b.apply("head.s1", out.d12);
  if (b.ablation().deep_supervision) {
    out.predictions[1] = b.apply("head.s2", out.d34);
    out.predictions[2] = b.apply("head.s3", out.d5);
    out.predictions[3] = b.apply("head.s4", block5);
  }
  return out;
}

template <typename T>
SaliencyMap to_saliency(const Tensor<T>& logits) {
  if (logits.rank() != 3 || logits.channels() != 2) {
    throw ShapeError("to_saliency needs 2-channel logits, got " + shape_string(logits.shape()));
  }
  const std::size_t h = logits.height(), w = logits.width(), n = h * w;
  SaliencyMap s({h, w});
  const T* bg = logits.channel(0);
  const T* fg = logits.channel(1);
  for (std::size_t i = 0; i < n; ++i) {
    // softmax over two channels == logistic of the logit difference
    const double d = static_cast<double>(fg[i]) - static_cast<double>(bg[i]);
    s[i] = d >= 0 ? 1.0 / (1.0 + std::exp(-d)) : std::exp(d) / (1.0 + std::exp(d));
  }
  return s;
}

template DecoderOutput decode<float>(const Binding<float>&, Var, Var, Var, Var);
template DecoderOutput decode<double>(const Binding<double>&, Var, Var, Var, Var);
template SaliencyMap to_saliency<float>(const Tensor<float>&);
template SaliencyMap to_saliency<double>(const Tensor<double>&);

}  // namespace cmwnet::decoder
