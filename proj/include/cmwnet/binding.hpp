#pragma once

#include <string_view>
#include <vector>

#include "cmwnet/architecture.hpp"
#include "cmwnet/config.hpp"
#include "cmwnet/graph.hpp"
#include "cmwnet/params.hpp"

namespace cmwnet {

/// Everything a module needs to add layers to a graph: the graph itself,
/// the parameters, and the build's structure.
template <typename T>
class Binding {
 public:
  Binding(Graph<T>& graph, const ParameterStore<T>& params, const NetworkConfig& config,
          const AblationSpec& ablation)
      : graph_(graph),
        params_(params),
        config_(config),
        ablation_(ablation),
        layers_(arch::layers(config, ablation)) {}

  Graph<T>& graph() const { return graph_; }
  const ParameterStore<T>& params() const { return params_; }
  const NetworkConfig& config() const { return config_; }
  const AblationSpec& ablation() const { return ablation_; }
  const std::vector<arch::LayerSpec>& layers() const { return layers_; }
  bool has_layer(std::string_view name) const {
    for (const auto& l : layers_) {
      if (l.name == name) return true;
    }
    return false;
  }

  /// Applies the named convolution or deconvolution layer to x.
  Var apply(std::string_view layer, Var x, Activation act = Activation::none) const {
    const auto& spec = arch::find_layer(layers_, layer);
    const auto& wt = params_.at(spec.weight_name());
    if (wt.shape() != spec.weight_shape()) {
      throw ShapeError("parameter " + spec.weight_name() + " has shape " +
                       shape_string(wt.shape()) + ", layer expects " +
                       shape_string(spec.weight_shape()));
    }
    Var w = graph_.parameter(spec.weight_name(), wt);
    Var b = graph_.parameter(spec.bias_name(), params_.at(spec.bias_name()));
    if (spec.kind == arch::LayerKind::deconv) return ops::deconv2d(graph_, x, w, b, act);
    return ops::conv2d(graph_, x, w, b, ConvGeometry{spec.kernel, spec.stride, spec.pad, spec.dilation},
                       act);
  }

 private:
  Graph<T>& graph_;
  const ParameterStore<T>& params_;
  NetworkConfig config_;
  AblationSpec ablation_;
  std::vector<arch::LayerSpec> layers_;
};

}  // namespace cmwnet
