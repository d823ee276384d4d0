#pragma once

// Deeply supervised loss: a weighted sum of per-scale two-class softmax
// cross-entropies, each against the ground truth resampled to the
// prediction's resolution.

#include <array>

#include "cmwnet/config.hpp"
#include "cmwnet/graph.hpp"

namespace cmwnet::loss {

struct LossConfig {
  std::array<double, 4> alpha{1.0, 1.0, 1.0, 1.0};

  void validate() const;
  bool operator==(const LossConfig&) const = default;
};

json to_json(const LossConfig& c);
LossConfig loss_config_from_json(const json& j);

/// Binary masks for S1..S4, each 1 x H_t x W_t. Level 0 is the original mask.
struct ScaledGroundTruth {
  std::array<Tensor<float>, 4> levels;
};

/// Nearest-neighbour decimation sampling the top-left pixel of each cell,
/// then re-binarized at 0.5. Throws ShapeError unless the target divides
/// the source in both dimensions.
Tensor<float> downscale_gt(const Tensor<float>& gt, std::size_t height, std::size_t width);

/// Masks at the resolutions of S1 (R), S2 (R/4), S3 and S4 (R/16).
ScaledGroundTruth scale_ground_truth(const Tensor<float>& gt, const NetworkConfig& config);

/// Mean per-pixel cross-entropy of 2 x H x W logits against a 1 x H x W mask.
template <typename T>
double softmax_loss(const Tensor<T>& logits, const Tensor<float>& gt);

struct LossTerms {
  Var total;
  std::array<Var, 4> terms;  // invalid where the term is absent
};

/// Sum over t of alpha_t * softmax_loss(S_t, G_t). Without deep supervision
/// only the S1 term exists and alpha_2..4 are ignored; otherwise a nonzero
/// alpha_t with no prediction S_t is a ConfigError.
template <typename T>
LossTerms total_loss(Graph<T>& g, const std::array<Var, 4>& predictions,
                     const ScaledGroundTruth& gt, const LossConfig& config,
                     const AblationSpec& ablation);

}  // namespace cmwnet::loss
