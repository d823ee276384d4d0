#include "cmwnet/cmw.hpp"

#include "cmwnet/errors.hpp"
#include "cmwnet/kernels/kernels.hpp"

namespace cmwnet::cmw {

template <typename T>
FeatureMap<T> enhance(const FeatureMap<T>& f, const ResponseMap<T>& r1, const ResponseMap<T>& r2) {
  require_same_shape(f.data, r1.data, "enhance r1");
  require_same_shape(f.data, r2.data, "enhance r2");
  FeatureMap<T> out{Tensor<T>(f.data.shape()), f.block, f.stream};
  for (std::size_t i = 0; i < f.data.size(); ++i) {
    const T v = f.data[i];
    out.data[i] = v + r1.data[i] * v + r2.data[i] * v;
  }
  return out;
}

template <typename T>
Tensor<T> modulate(const Tensor<T>& f, const Tensor<T>& r) {
  require_same_shape(f, r, "modulate");
  Tensor<T> out(f.shape());
  kernels::active<T>().mul(f.size(), r.data(), f.data(), out.data());
  return out;
}

template <typename T>
Tensor<T> aggregate(const Tensor<T>& f_r, const Tensor<T>& f_dw, const Tensor<T>& f_rw) {
  require_same_shape(f_r, f_dw, "aggregate f_dw");
  require_same_shape(f_r, f_rw, "aggregate f_rw");
  Tensor<T> out(f_r.shape());
  for (std::size_t i = 0; i < f_r.size(); ++i) out[i] = f_r[i] + f_dw[i] + f_rw[i];
  return out;
}

template <typename T>
Var local_global_features(const Binding<T>& b, Var features, const std::string& path) {
  std::vector<Var> branches{b.apply(path + ".loc1", features, Activation::relu),
                            b.apply(path + ".loc2", features, Activation::relu)};
  if (b.has_layer(path + ".glo7")) {
    branches.push_back(b.apply(path + ".glo7", features, Activation::relu));
    branches.push_back(b.apply(path + ".dil5", features, Activation::relu));
  }
  return ops::concat_channels(b.graph(), branches);
}

template <typename T>
Var depth_response(const Binding<T>& b, Var f_lg, int block) {
  if (block < 1 || block > 5) throw ConfigError("depth_response block must be 1..5");
  return ops::sigmoid(b.graph(), b.apply("cmw.dw" + std::to_string(block) + ".fuse", f_lg));
}

template <typename T>
Var rgb_response(const Binding<T>& b, Var f_r, int block) {
  const std::string path = "cmw.rw" + std::to_string(block);
  Var lg = local_global_features(b, f_r, path);
  return ops::sigmoid(b.graph(), b.apply(path + ".fuse", lg));
}

template <typename T>
std::array<Var, 4> depth_to_rgb(Graph<T>& g, const std::array<Var, 4>& f_r,
                                const std::array<Var, 4>& r_dw, const AblationSpec& a) {
  std::array<Var, 4> out;
  for (int l = 1; l <= 4; ++l) {
    const int source = arch::dw_target(a, l);
    const Var r = r_dw[source - 1];
    if (!g.value(r).same_shape(g.value(f_r[l - 1]))) {
      throw ShapeError("depth response of block " + std::to_string(source) + " " +
                       shape_string(g.value(r).shape()) + " cannot modulate block " +
                       std::to_string(l) + " " + shape_string(g.value(f_r[l - 1]).shape()));
    }
    out[l - 1] = ops::mul(g, r, f_r[l - 1]);
  }
  return out;
}

template <typename T>
Var rgb_to_rgb(Graph<T>& g, Var f_r, Var r_rw) {
  return ops::mul(g, r_rw, f_r);
}

template <typename T>
Var aggregate(Graph<T>& g, Var f_r, Var f_dw, Var f_rw) {
  const auto& shape = g.value(f_r).shape();
  if (!f_dw.valid()) f_dw = g.constant(Tensor<T>(shape));
  if (!f_rw.valid()) f_rw = g.constant(Tensor<T>(shape));
  return ops::add(g, {f_r, f_dw, f_rw});
}

template <typename T>
CMWPairOutput cmw_pair(const Binding<T>& b, Var f_de_low, Var f_de_high, int k) {
  if (k != 1 && k != 2) throw ConfigError("cmw_pair level must be 1 or 2");
  CMWPairOutput out;
  Var up = b.apply("cmw.pair" + std::to_string(k) + ".up", f_de_high);
  out.intermediates["up" + std::to_string(2 * k)] = up;
  out.f_cmw = ops::concat_channels(b.graph(), {f_de_low, up});
  return out;
}

namespace {

struct Streams {
  std::array<Var, 5> primary;
  std::array<Var, 5> guide;
  bool has_guide = false;
};

Streams roles(const encoder::EncoderOutput& enc, const AblationSpec& a) {
  Streams s;
  if (!enc.has_depth()) {
    s.primary = enc.rgb;
    return s;
  }
  s.has_guide = true;
  if (a.direction == Direction::DeR) {
    s.primary = enc.rgb;
    s.guide = enc.depth;
  } else {
    s.primary = enc.depth;
    s.guide = enc.rgb;
  }
  return s;
}

template <typename T>
Var concat_fusion(const Binding<T>& b, Var primary, Var guide, int block) {
  Var cat = ops::concat_channels(b.graph(), {primary, guide});
  return b.apply("cmw.cat" + std::to_string(block) + ".fuse", cat);
}

}  // namespace

template <typename T>
Var cmw_high(const Binding<T>& b, Var f_r5, Var f_d5, std::map<std::string, Var>* intermediates) {
  const AblationSpec& a = b.ablation();
  if (!a.use_cmw_h) return f_r5;
  if (!a.use_weighting) return concat_fusion(b, f_r5, f_d5, 5);
  Var f_dw, f_rw;
  if (a.use_depth) {
    Var lg = local_global_features(b, f_d5, "cmw.dw5");
    Var r = depth_response(b, lg, 5);
    f_dw = ops::mul(b.graph(), r, f_r5);
    if (intermediates) {
      (*intermediates)["f_lg5"] = lg;
      (*intermediates)["r_dw5"] = r;
      (*intermediates)["f_dw5"] = f_dw;
    }
  }
  if (a.use_rw) {
    Var r = rgb_response(b, f_r5, 5);
    f_rw = rgb_to_rgb(b.graph(), f_r5, r);
    if (intermediates) {
      (*intermediates)["r_rw5"] = r;
      (*intermediates)["f_rw5"] = f_rw;
    }
  }
  return aggregate(b.graph(), f_r5, f_dw, f_rw);
}

template <typename T>
CMWOutputs cross_modal_weighting(const Binding<T>& b, const encoder::EncoderOutput& enc) {
  const AblationSpec& a = b.ablation();
  Graph<T>& g = b.graph();
  const Streams s = roles(enc, a);
  if (a.use_depth && !s.has_guide) throw ConfigError("build expects a depth stream");
  CMWOutputs out;
  auto keep = [&](const std::string& name, Var v) {
    if (v.valid()) out.intermediates[name] = v;
  };

  if (!a.use_cmw_lm) {
    for (int l = 0; l < 4; ++l) out.f_de[l] = s.primary[l];
  } else if (!a.use_weighting) {
    for (int l = 1; l <= 4; ++l) out.f_de[l - 1] = concat_fusion(b, s.primary[l - 1], s.guide[l - 1], l);
  } else {
    std::array<Var, 4> f_primary{s.primary[0], s.primary[1], s.primary[2], s.primary[3]};
    std::array<Var, 4> f_dw{}, f_rw{};
    if (a.use_depth) {
      std::array<Var, 4> r_dw;
      for (int l = 1; l <= 4; ++l) {
        Var lg = local_global_features(b, s.guide[l - 1], "cmw.dw" + std::to_string(l));
        r_dw[l - 1] = depth_response(b, lg, l);
        keep("f_lg" + std::to_string(l), lg);
        keep("r_dw" + std::to_string(l), r_dw[l - 1]);
      }
      f_dw = depth_to_rgb(g, f_primary, r_dw, a);
    }
    if (a.use_rw) {
      for (int l = 1; l <= 4; ++l) {
        Var r = rgb_response(b, f_primary[l - 1], l);
        keep("r_rw" + std::to_string(l), r);
        f_rw[l - 1] = rgb_to_rgb(g, f_primary[l - 1], r);
      }
    }
    for (int l = 1; l <= 4; ++l) {
      keep("f_dw" + std::to_string(l), f_dw[l - 1]);
      keep("f_rw" + std::to_string(l), f_rw[l - 1]);
      out.f_de[l - 1] = aggregate(g, f_primary[l - 1], f_dw[l - 1], f_rw[l - 1]);
    }
  }

  out.f_de[4] = cmw_high(b, s.primary[4], s.has_guide ? s.guide[4] : Var{}, &out.intermediates);
  for (int l = 1; l <= 5; ++l) keep("f_de" + std::to_string(l), out.f_de[l - 1]);

  for (int k = 1; k <= 2; ++k) {
    auto pair = cmw_pair(b, out.f_de[2 * k - 2], out.f_de[2 * k - 1], k);
    out.f_cmw[k - 1] = pair.f_cmw;
    for (auto& [name, v] : pair.intermediates) keep(name, v);
    keep("f_cmw" + std::to_string(k), pair.f_cmw);
  }
  return out;
}

#define CMWNET_INSTANTIATE(T)                                                                  \
  template FeatureMap<T> enhance<T>(const FeatureMap<T>&, const ResponseMap<T>&,               \
                                    const ResponseMap<T>&);                                    \
  template Tensor<T> modulate<T>(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> aggregate<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);       \
  template Var local_global_features<T>(const Binding<T>&, Var, const std::string&);           \
  template Var depth_response<T>(const Binding<T>&, Var, int);                                 \
  template Var rgb_response<T>(const Binding<T>&, Var, int);                                   \
  template std::array<Var, 4> depth_to_rgb<T>(Graph<T>&, const std::array<Var, 4>&,            \
                                              const std::array<Var, 4>&, const AblationSpec&); \
  template Var rgb_to_rgb<T>(Graph<T>&, Var, Var);                                             \
  template Var aggregate<T>(Graph<T>&, Var, Var, Var);                                         \
  template CMWPairOutput cmw_pair<T>(const Binding<T>&, Var, Var, int);                        \
  template Var cmw_high<T>(const Binding<T>&, Var, Var, std::map<std::string, Var>*);                                       \
  template CMWOutputs cross_modal_weighting<T>(const Binding<T>&, const encoder::EncoderOutput&);
CMWNET_INSTANTIATE(float)
CMWNET_INSTANTIATE(double)
#undef CMWNET_INSTANTIATE

}  // namespace cmwnet::cmw
