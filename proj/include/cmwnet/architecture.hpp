#pragma once

// Structural rules shared by parameter initialization, the forward pass and
// the shape table: which layers exist under an ablation, their geometry, and
// how encoder blocks are paired for depth-to-RGB weighting.

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "cmwnet/config.hpp"

namespace cmwnet::arch {

enum class LayerKind { conv, deconv };

/// Initializer family a layer's kernel is drawn from.
enum class ParamGroup {
  backbone,     // VGG16 encoder layers (shared across streams)
  depth_first,  // depth stream conv1_1, Gaussian std 0.01
  added,        // every layer not in VGG16, Xavier
};

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::conv;
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t pad = 1;
  std::size_t dilation = 1;
  ParamGroup group = ParamGroup::added;

  std::string weight_name() const { return name + ".weight"; }
  std::string bias_name() const { return name + ".bias"; }
  std::vector<std::size_t> weight_shape() const {
    return kind == LayerKind::conv ? std::vector<std::size_t>{out, in, kernel, kernel}
                                   : std::vector<std::size_t>{in, out, kernel, kernel};
  }
};

/// Number of 3x3 convolutions per VGG16 block.
inline constexpr int kConvsPerBlock[5] = {2, 2, 3, 3, 3};

/// Width of each local/global filter branch in DW and RW stacks.
inline std::size_t branch_width(std::size_t in_channels) {
  return in_channels / 2 < 4 ? 4 : in_channels / 2;
}

/// Whether a CMW module processes block l under this ablation.
bool cmw_active(const AblationSpec& a, int block);

/// Block whose RGB features the depth response of block l modulates. The
/// pairing is an involution: dw_target(dw_target(l)) == l.
int dw_target(const AblationSpec& a, int block);

/// Name of the encoder layer for block b, conv index i (1-based), e.g. conv3_2.
std::string encoder_layer(int block, int index);

/// Every layer of the network for this build, in deterministic order.
std::vector<LayerSpec> layers(const NetworkConfig& c, const AblationSpec& a);

/// Looks up a layer by name; throws ConfigError when absent.
const LayerSpec& find_layer(const std::vector<LayerSpec>& specs, std::string_view name);

}  // namespace cmwnet::arch
