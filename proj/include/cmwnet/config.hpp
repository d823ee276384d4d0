#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

namespace cmwnet {

using json = nlohmann::json;

enum class DType { f32, f64 };

/// Widths, resolution, and seed for one network build.
struct NetworkConfig {
  std::size_t input_resolution = 288;
  // VGG16 block widths R-E/D-E 1..5.
  std::array<std::size_t, 5> block_channels{64, 128, 256, 512, 512};
  // Decoder levels D5, D3&4, D1&2.
  std::array<std::size_t, 3> decoder_channels{256, 128, 64};
  std::uint64_t seed = 0;
  DType dtype = DType::f32;

  void validate() const;
  std::size_t block_resolution(int block) const {
    return input_resolution >> (block - 1);
  }
  std::size_t channels(int block) const { return block_channels.at(block - 1); }

  /// Desk-scale widths (4,8,8,8,8) with a small decoder.
  static NetworkConfig toy(std::size_t resolution = 32);

  bool operator==(const NetworkConfig&) const = default;
};

enum class Direction { DeR, ReD };
enum class ScaleMode { cross_adjacent, same_scale, cross_two };

/// On/off switches for the ablation variants. Default is the full model.
struct AblationSpec {
  Direction direction = Direction::DeR;
  bool use_depth = true;
  bool use_cmw_lm = true;
  bool use_cmw_h = true;
  bool use_rw = true;
  bool use_weighting = true;  // false: concatenation fusion instead of DW/RW
  bool dw_global_filters = true;
  bool rw_global_filters = false;
  ScaleMode scale_mode = ScaleMode::cross_adjacent;
  bool deep_supervision = true;

  /// Rejects combinations that ask to alter a component the same ablation removes.
  void validate() const;
  bool operator==(const AblationSpec&) const = default;
};

/// Ablation variant names accepted on the command line, in table order.
const std::vector<std::string>& ablation_variant_names();
AblationSpec ablation_from_name(std::string_view name);

std::string to_string(Direction d);
std::string to_string(ScaleMode m);
std::string to_string(DType d);

json to_json(const NetworkConfig& c);
json to_json(const AblationSpec& a);
NetworkConfig network_config_from_json(const json& j);
AblationSpec ablation_from_json(const json& j);

/// Stable 64-bit FNV-1a digest of canonical JSON text.
std::uint64_t fnv1a64(std::string_view bytes);
std::uint64_t config_hash(const json& j);
std::string hex64(std::uint64_t v);

/// Named tensor shapes a forward pass produces.
class ShapeTable {
 public:
  void add(std::string name, std::vector<std::size_t> shape);
  bool contains(std::string_view name) const;
  const std::vector<std::size_t>& at(std::string_view name) const;
  const std::vector<std::pair<std::string, std::vector<std::size_t>>>& entries() const {
    return entries_;
  }

 private:
  std::vector<std::pair<std::string, std::vector<std::size_t>>> entries_;
};

/// Shapes of encoder blocks (R-E*, D-E*), response maps, CMW outputs,
/// decoder levels (D5, D34, D12), and predictions (S1..S4 as [H, W]).
ShapeTable expected_shapes(const NetworkConfig& config, const AblationSpec& ablation = {});

}  // namespace cmwnet
