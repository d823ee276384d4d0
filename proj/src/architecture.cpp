#include "cmwnet/architecture.hpp"

#include "cmwnet/errors.hpp"

namespace cmwnet::arch {

bool cmw_active(const AblationSpec& a, int block) {
  return block == 5 ? a.use_cmw_h : a.use_cmw_lm;
}

int dw_target(const AblationSpec& a, int block) {
  if (block == 5) return 5;
  switch (a.scale_mode) {
    case ScaleMode::same_scale: return block;
    case ScaleMode::cross_two: return block <= 2 ? block + 2 : block - 2;
    case ScaleMode::cross_adjacent: break;
  }
  return block % 2 == 1 ? block + 1 : block - 1;
}

std::string encoder_layer(int block, int index) {
  return "conv" + std::to_string(block) + "_" + std::to_string(index);
}

namespace {

LayerSpec conv(std::string name, std::size_t in, std::size_t out, std::size_t k,
               std::size_t stride, std::size_t pad, std::size_t dilation, ParamGroup g) {
  return {std::move(name), LayerKind::conv, in, out, k, stride, pad, dilation, g};
}

LayerSpec conv3(std::string name, std::size_t in, std::size_t out,
                ParamGroup g = ParamGroup::added) {
  return conv(std::move(name), in, out, 3, 1, 1, 1, g);
}

LayerSpec deconv(std::string name, std::size_t in, std::size_t out, std::size_t factor) {
  return {std::move(name), LayerKind::deconv, in, out, factor, factor, 0, 1, ParamGroup::added};
}

// Resampling fusion layer from a block at resolution `from` to one at `to`.
// Downsampling by s uses a (2s-1)x(2s-1) stride-s convolution padded by s-1;
// upsampling by s uses an s x s stride-s deconvolution.
LayerSpec fusion(std::string name, std::size_t in, std::size_t out, std::size_t from,
                 std::size_t to) {
  if (from == to) return conv3(std::move(name), in, out);
  if (from > to) {
    const std::size_t s = from / to;
    return conv(std::move(name), in, out, 2 * s - 1, s, s - 1, 1, ParamGroup::added);
  }
  return deconv(std::move(name), in, out, to / from);
}

// Local (two 3x3) and optionally global (7x7, dilated 3x3 rate 5) branches.
void filter_stack(std::vector<LayerSpec>& out, const std::string& prefix, std::size_t in,
                  bool global) {
  const std::size_t b = branch_width(in);
  out.push_back(conv3(prefix + ".loc1", in, b));
  out.push_back(conv3(prefix + ".loc2", in, b));
  if (global) {
    out.push_back(conv(prefix + ".glo7", in, b, 7, 1, 3, 1, ParamGroup::added));
    out.push_back(conv(prefix + ".dil5", in, b, 3, 1, 5, 5, ParamGroup::added));
  }
}

}  // namespace

std::vector<LayerSpec> layers(const NetworkConfig& c, const AblationSpec& a) {
  c.validate();
  a.validate();
  std::vector<LayerSpec> out;

  // Encoder. conv1_1 differs per stream (3 vs 1 input channel); all other
  // layers are a single shared set.
  out.push_back(conv3("encoder.conv1_1.rgb", 3, c.channels(1), ParamGroup::backbone));
  if (a.use_depth) {
    out.push_back(conv3("encoder.conv1_1.depth", 1, c.channels(1), ParamGroup::depth_first));
  }
  std::size_t in = c.channels(1);
  for (int b = 1; b <= 5; ++b) {
    for (int i = 1; i <= kConvsPerBlock[b - 1]; ++i) {
      if (b == 1 && i == 1) continue;
      out.push_back(conv3("encoder." + encoder_layer(b, i), in, c.channels(b), ParamGroup::backbone));
      in = c.channels(b);
    }
  }

  // Cross-modal weighting modules.
  for (int l = 1; l <= 5; ++l) {
    if (!cmw_active(a, l)) continue;
    const std::string ls = std::to_string(l);
    const std::size_t cl = c.channels(l);
    if (!a.use_weighting) {
      out.push_back(conv("cmw.cat" + ls + ".fuse", 2 * cl, cl, 1, 1, 0, 1, ParamGroup::added));
      continue;
    }
    if (a.use_depth) {
      const std::string p = "cmw.dw" + ls;
      filter_stack(out, p, cl, a.dw_global_filters);
      const std::size_t lg = branch_width(cl) * (a.dw_global_filters ? 4 : 2);
      const int t = dw_target(a, l);
      out.push_back(fusion(p + ".fuse", lg, c.channels(t), c.block_resolution(l),
                           c.block_resolution(t)));
    }
    if (a.use_rw) {
      const std::string p = "cmw.rw" + ls;
      filter_stack(out, p, cl, a.rw_global_filters);
      const std::size_t lg = branch_width(cl) * (a.rw_global_filters ? 4 : 2);
      out.push_back(conv3(p + ".fuse", lg, cl));
    }
  }
  for (int k = 1; k <= 2; ++k) {
    const std::size_t ch = c.channels(2 * k);
    out.push_back(deconv("cmw.pair" + std::to_string(k) + ".up", ch, ch, 2));
  }

  // Decoder.
  const auto [d5, d34, d12] = c.decoder_channels;
  out.push_back(conv3("decoder.d5.conv1", c.channels(5), d5));
  out.push_back(conv3("decoder.d5.conv2", d5, d5));
  out.push_back(deconv("decoder.up5", d5, d5, 4));
  out.push_back(conv3("decoder.d34.conv1", d5 + c.channels(3) + c.channels(4), d34));
  out.push_back(conv3("decoder.d34.conv2", d34, d34));
  out.push_back(deconv("decoder.up34", d34, d34, 4));
  out.push_back(conv3("decoder.d12.conv1", d34 + c.channels(1) + c.channels(2), d12));
  out.push_back(conv3("decoder.d12.conv2", d12, d12));

  // Prediction heads S1..S4.
  out.push_back(conv3("head.s1", d12, 2));
  if (a.deep_supervision) {
    out.push_back(conv3("head.s2", d34, 2));
    out.push_back(conv3("head.s3", d5, 2));
    out.push_back(conv3("head.s4", c.channels(5), 2));
  }
  return out;
}

const LayerSpec& find_layer(const std::vector<LayerSpec>& specs, std::string_view name) {
  for (const auto& s : specs) {
    if (s.name == name) return s;
  }
  throw ConfigError("layer '" + std::string(name) + "' is not part of this build");
}

}  // namespace cmwnet::arch
