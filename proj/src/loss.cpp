#include "cmwnet/loss.hpp"

#include <cmath>

#include "cmwnet/errors.hpp"

namespace cmwnet::loss {

void LossConfig::validate() const {
  for (double a : alpha) {
    if (!std::isfinite(a) || a < 0) throw ConfigError("loss weights must be finite and >= 0");
  }
}

json to_json(const LossConfig& c) { return json{{"alpha", c.alpha}}; }

LossConfig loss_config_from_json(const json& j) {
  LossConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key != "alpha") throw ConfigError("unknown loss config key '" + key + "'");
    if (!value.is_array() || value.size() != 4) throw ConfigError("loss.alpha needs 4 numbers");
    for (std::size_t i = 0; i < 4; ++i) c.alpha[i] = value[i].get<double>();
  }
  c.validate();
  return c;
}

Tensor<float> downscale_gt(const Tensor<float>& gt, std::size_t height, std::size_t width) {
  if (gt.rank() != 3 || gt.channels() != 1) {
    throw ShapeError("ground truth must be 1xHxW, got " + shape_string(gt.shape()));
  }
  const std::size_t h = gt.height(), w = gt.width();
  if (height == 0 || width == 0 || h % height != 0 || w % width != 0) {
    throw ShapeError("cannot downscale ground truth " + shape_string(gt.shape()) + " to " +
                     std::to_string(height) + "x" + std::to_string(width) +
                     " by an integer factor");
  }
  const std::size_t fy = h / height, fx = w / width;
  Tensor<float> out({1, height, width});
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      out.at(0, y, x) = gt.at(0, y * fy, x * fx) >= 0.5f ? 1.0f : 0.0f;
    }
  }
  return out;
}

ScaledGroundTruth scale_ground_truth(const Tensor<float>& gt, const NetworkConfig& config) {
  const std::size_t r = config.input_resolution;
  if (gt.rank() != 3 || gt.height() != r || gt.width() != r) {
    throw ShapeError("ground truth " + shape_string(gt.shape()) + " is not at the network resolution " +
                     std::to_string(r));
  }
  ScaledGroundTruth s;
  s.levels[0] = downscale_gt(gt, r, r);
  s.levels[1] = downscale_gt(gt, r / 4, r / 4);
  s.levels[2] = downscale_gt(gt, r / 16, r / 16);
  s.levels[3] = s.levels[2];
  return s;
}

template <typename T>
double softmax_loss(const Tensor<T>& logits, const Tensor<float>& gt) {
  if (logits.rank() != 3 || logits.channels() != 2 || gt.rank() != 3 || gt.channels() != 1 ||
      gt.height() != logits.height() || gt.width() != logits.width()) {
    throw ShapeError("softmax_loss: logits " + shape_string(logits.shape()) + " vs mask " +
                     shape_string(gt.shape()));
  }
  Graph<T> g(false);
  Var x = g.constant(logits);
  return static_cast<double>(g.value(ops::softmax_cross_entropy(g, x, gt.cast<T>()))[0]);
}

template <typename T>
LossTerms total_loss(Graph<T>& g, const std::array<Var, 4>& predictions,
                     const ScaledGroundTruth& gt, const LossConfig& config,
                     const AblationSpec& ablation) {
  config.validate();
  LossTerms out;
  std::vector<Var> terms;
  std::vector<T> weights;
  const int count = ablation.deep_supervision ? 4 : 1;
  for (int t = 0; t < count; ++t) {
    const double a = config.alpha[t];
    if (!predictions[t].valid()) {
      if (a != 0.0) {
        throw ConfigError("loss weight for S" + std::to_string(t + 1) +
                          " is nonzero but the prediction is missing");
      }
      continue;
    }
    const auto& logits = g.value(predictions[t]);
    const auto& mask = gt.levels[t];
    if (mask.rank() != 3 || mask.height() != logits.height() || mask.width() != logits.width()) {
      throw ShapeError("S" + std::to_string(t + 1) + " is " + shape_string(logits.shape()) +
                       " but its ground truth is " + shape_string(mask.shape()));
    }
    out.terms[t] = ops::softmax_cross_entropy(g, predictions[t], mask.cast<T>());
    terms.push_back(out.terms[t]);
    weights.push_back(static_cast<T>(a));
  }
  if (terms.empty()) {
    out.total = g.constant(Tensor<T>({1}));
  } else {
    out.total = ops::weighted_sum(g, terms, weights);
  }
  return out;
}

template double softmax_loss<float>(const Tensor<float>&, const Tensor<float>&);
template double softmax_loss<double>(const Tensor<double>&, const Tensor<float>&);
template LossTerms total_loss<float>(Graph<float>&, const std::array<Var, 4>&,
                                     const ScaledGroundTruth&, const LossConfig&,
                                     const AblationSpec&);
template LossTerms total_loss<double>(Graph<double>&, const std::array<Var, 4>&,
                                      const ScaledGroundTruth&, const LossConfig&,
                                      const AblationSpec&);

}  // namespace cmwnet::loss
