#pragma once

#include <string>

#include "cmwnet/tensor.hpp"

namespace cmwnet {

enum class Stream { rgb, depth, fused };

/// One block's activations, tagged with where it came from. `block` is the
/// encoder block 1..5, or 0 for decoder/fused maps.
template <typename T>
struct FeatureMap {
  Tensor<T> data;
  int block = 0;
  Stream stream = Stream::rgb;
};

enum class ResponseKind { dw, rw };

/// Sigmoid gate with entries in [0,1], same shape as the features it scales.
template <typename T>
struct ResponseMap {
  Tensor<T> data;
  ResponseKind kind = ResponseKind::dw;

  void validate() const {
    for (T v : data.values()) {
      if (!(v >= T(0) && v <= T(1))) throw ShapeError("response map entry outside [0,1]");
    }
  }
};

/// RGB [3xHxW] and depth [1xHxW] in [0,1], binary ground truth [1xHxW].
struct RGBDTriplet {
  Tensor<float> rgb;
  Tensor<float> depth;
  Tensor<float> gt;
  std::string id;

  std::size_t height() const { return rgb.height(); }
  std::size_t width() const { return rgb.width(); }
  bool has_gt() const { return !gt.empty(); }
  void validate() const;
};

/// Per-pixel foreground probability, [H x W] stored as a rank-2 tensor.
using SaliencyMap = Tensor<double>;

}  // namespace cmwnet
