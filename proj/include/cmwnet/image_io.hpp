#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cmwnet/tensor.hpp"

namespace cmwnet::io {

/// Decoded PNG with interleaved samples; bit_depth is 8 or 16.
struct PngImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  int bit_depth = 8;
  std::vector<std::uint16_t> samples;

  std::uint16_t max_value() const { return bit_depth == 16 ? 65535 : 255; }
};

/// Reads a PNG converted to `channels` (1 = gray, 3 = RGB); palettes and
/// low bit depths expand to 8 bits, alpha is dropped, 16-bit is kept.
/// Throws DataError on missing or undecodable files.
PngImage read_png(const std::filesystem::path& path, std::size_t channels);

void write_png(const std::filesystem::path& path, const PngImage& image);

/// C x H x W tensor with samples scaled to [0,1].
Tensor<float> to_tensor(const PngImage& image);

/// Quantizes a C x H x W tensor (C = 1 or 3) clamped to [0,1].
PngImage from_tensor(const Tensor<float>& t, int bit_depth = 8);
PngImage from_map(const Tensor<double>& map);

}  // namespace cmwnet::io
