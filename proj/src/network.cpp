#include "cmwnet/network.hpp"

#include "cmwnet/errors.hpp"

namespace cmwnet {

template <typename T>
ForwardPass forward(const Binding<T>& b, Var rgb, Var depth) {
  ForwardPass p;
  if (b.ablation().use_depth) {
    if (!depth.valid()) throw ShapeError("build uses depth but no depth input was given");
    p.enc = encoder::encode(b, rgb, depth);
  } else {
    p.enc.rgb = encoder::encode_rgb_only(b, rgb);
  }
  p.cmw = cmw::cross_modal_weighting(b, p.enc);
  const bool red = b.ablation().direction == Direction::ReD;
  const Var block5 = red ? p.enc.depth[4] : p.enc.rgb[4];
  p.dec = decoder::decode(b, p.cmw.f_de[4], p.cmw.f_cmw[1], p.cmw.f_cmw[0], block5);
  return p;
}

template <typename T>
ShapeTable measured_shapes(const Graph<T>& g, const ForwardPass& pass, const AblationSpec& a) {
  ShapeTable t;
  for (int l = 1; l <= 5; ++l) t.add("R-E" + std::to_string(l), g.value(pass.enc.rgb[l - 1]).shape());
  if (pass.enc.has_depth()) {
    for (int l = 1; l <= 5; ++l) {
      t.add("D-E" + std::to_string(l), g.value(pass.enc.depth[l - 1]).shape());
    }
  }
  for (int l = 1; l <= 5; ++l) {
    for (const char* kind : {"r_dw", "r_rw"}) {
      const std::string name = kind + std::to_string(l);
      if (auto it = pass.cmw.intermediates.find(name); it != pass.cmw.intermediates.end()) {
        t.add(name, g.value(it->second).shape());
      }
    }
  }
  for (int l = 1; l <= 5; ++l) t.add("f_de" + std::to_string(l), g.value(pass.cmw.f_de[l - 1]).shape());
  for (int k = 1; k <= 2; ++k) t.add("f_cmw" + std::to_string(k), g.value(pass.cmw.f_cmw[k - 1]).shape());
  t.add("D5", g.value(pass.dec.d5).shape());
  t.add("D34", g.value(pass.dec.d34).shape());
  t.add("D12", g.value(pass.dec.d12).shape());
  for (int s = 1; s <= 4; ++s) {
    const Var v = pass.dec.predictions[s - 1];
    if (!v.valid()) continue;
    const auto& shape = g.value(v).shape();
    t.add("S" + std::to_string(s), {shape[1], shape[2]});
  }
  (void)a;
  return t;
}

template <typename T>
SaliencyMap predict_saliency(const ParameterStore<T>& params, const NetworkConfig& config,
                             const AblationSpec& ablation, const Tensor<float>& rgb,
                             const Tensor<float>& depth) {
  Graph<T> g(false);
  Binding<T> b(g, params, config, ablation);
  Var r = g.constant(rgb.cast<T>());
  Var d = ablation.use_depth ? g.constant(depth.cast<T>()) : Var{};
  const ForwardPass p = forward(b, r, d);
  return decoder::to_saliency(g.value(p.dec.predictions[0]));
}

template ForwardPass forward<float>(const Binding<float>&, Var, Var);
template ForwardPass forward<double>(const Binding<double>&, Var, Var);
template ShapeTable measured_shapes<float>(const Graph<float>&, const ForwardPass&,
                                           const AblationSpec&);
template ShapeTable measured_shapes<double>(const Graph<double>&, const ForwardPass&,
                                            const AblationSpec&);
template SaliencyMap predict_saliency<float>(const ParameterStore<float>&, const NetworkConfig&,
                                             const AblationSpec&, const Tensor<float>&,
                                             const Tensor<float>&);
template SaliencyMap predict_saliency<double>(const ParameterStore<double>&, const NetworkConfig&,
                                              const AblationSpec&, const Tensor<float>&,
                                              const Tensor<float>&);

}  // namespace cmwnet
