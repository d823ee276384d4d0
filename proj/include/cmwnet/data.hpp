#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cmwnet/config.hpp"
#include "cmwnet/types.hpp"

namespace cmwnet::data {

/// Layout root/{RGB,depth,GT}/<id>.png. An optional root/manifest.json may
/// override the subdirectory names, the item list and invert_depth.
struct DatasetManifest {
  std::filesystem::path root;
  std::string rgb_dir = "RGB";
  std::string depth_dir = "depth";
  std::string gt_dir = "GT";
  std::vector<std::string> items;
  bool invert_depth = false;
  // Subtract the per-channel ImageNet mean from RGB (for pretrained backbones).
  bool subtract_mean = false;
  // GT may be absent (prediction inputs).
  bool require_gt = true;

  std::filesystem::path rgb_path(const std::string& id) const;
  std::filesystem::path depth_path(const std::string& id) const;
  std::filesystem::path gt_path(const std::string& id) const;

  /// Throws DataError when an item is missing a required file.
  void validate() const;
};

/// Builds a manifest from a directory: items are the ids present in RGB
/// (sorted), unless root/manifest.json lists them.
DatasetManifest scan(const std::filesystem::path& root, bool require_gt = true);
DatasetManifest manifest_from_json(const std::filesystem::path& root, const json& j);

inline constexpr std::array<float, 3> kImageNetMean{0.485f, 0.456f, 0.406f};

/// Rescales depth to [0,1] per image (constant maps become zero) and
/// optionally inverts it.
void normalize_depth(Tensor<float>& depth, bool invert);

RGBDTriplet load_item(const DatasetManifest& m, const std::string& id);
std::vector<RGBDTriplet> load(const DatasetManifest& m);

/// Half-pixel-centred bilinear resampling of a CxHxW tensor.
Tensor<float> resize_bilinear(const Tensor<float>& t, std::size_t height, std::size_t width);
/// Nearest neighbour sampling the top-left source pixel of each cell.
Tensor<float> resize_nearest(const Tensor<float>& t, std::size_t height, std::size_t width);

/// Bilinear RGB and depth, nearest GT. Non-square inputs are stretched.
RGBDTriplet resize_triplet(const RGBDTriplet& t, std::size_t size = 288);

/// Counter-clockwise quarter turn and left-right mirror of a CxHxW tensor.
Tensor<float> rot90(const Tensor<float>& t);
Tensor<float> mirror(const Tensor<float>& t);

/// {original, rot90, rot180, rot270, mirror}. Throws ShapeError on
/// non-square input.
std::array<RGBDTriplet, 5> augment(const RGBDTriplet& t);
std::vector<RGBDTriplet> augment_all(const std::vector<RGBDTriplet>& items);

struct SynthSpec {
  std::uint64_t seed = 0;
  std::size_t count = 8;
  std::size_t resolution = 64;
  std::size_t min_shapes = 1;
  std::size_t max_shapes = 3;
  // Foreground depth exceeds the constant background by a contrast drawn
  // from this range.
  double min_contrast = 0.3;
  double max_contrast = 0.6;

  void validate() const;
};

json to_json(const SynthSpec& s);

/// Images of 1-3 random convex shapes (ellipses and convex polygons),
/// brighter and nearer than the background. Pure function of the spec.
std::vector<RGBDTriplet> synth_generate(const SynthSpec& spec);

/// Writes the standard layout; depth and GT as 8-bit gray. Returns the
/// written paths in order.
std::vector<std::filesystem::path> write_dataset(const std::filesystem::path& root,
                                                 const std::vector<RGBDTriplet>& items);

}  // namespace cmwnet::data
